use std::io::{self, BufReader};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use fairdyn::experiment::{self, AgentConfig, ExperimentConfig, Manifest};
use fairdyn::featmap::{collect_rollouts, head_mse, train_feature_map};
use fairdyn::harness::{phase_portrait, FixedPolicy, GreedyPolicy, Policy};
use fairdyn::metrics::DisparityKind;
use fairdyn::oracle::{oracle_optimal_value, OracleResolution};
use fairdyn::protocol::{self, Session};
use fairdyn::rng::seed_rng;
use fairdyn::types::ThresholdAction;

/// Long-term fairness dynamics: simulation, UCBFair training and baselines.
#[derive(Parser)]
#[command(name = "fairdyn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Fig1,
    Fig1Qr,
    Greedy,
}

#[derive(Subcommand)]
enum Command {
    /// Write a starter config file.
    InitConfig {
        #[arg(long, value_enum, default_value = "fig1")]
        preset: Preset,
        #[arg(long, default_value = "runs/fig1")]
        output_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Destination (`.toml` or `.json`).
        out: PathBuf,
    },
    /// Train UCBFair and write the artifact bundle.
    TrainUcbfair {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the greedy baseline and write the artifact bundle.
    RunGreedy {
        #[arg(long)]
        config: PathBuf,
    },
    /// Serve the environment over the JSON-lines protocol (stdio by default).
    Serve {
        #[arg(long)]
        config: PathBuf,
        /// Listen on this TCP address instead of stdio.
        #[arg(long)]
        tcp: Option<String>,
        /// Stop after this many TCP sessions.
        #[arg(long)]
        sessions: Option<usize>,
    },
    /// Phase portrait of the greedy agent in the config, or of fixed thresholds.
    PhasePortrait {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated thresholds for a fixed policy.
        #[arg(long, value_delimiter = ',')]
        thresholds: Option<Vec<f64>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Constrained optimum from an initial state by dynamic programming.
    Oracle {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', num_args = 1..=2, required = true)]
        state: Vec<f64>,
        #[arg(long, default_value_t = 33)]
        state_points: usize,
        #[arg(long, default_value_t = 65)]
        action_points: usize,
    },
    /// Fit and save the feature map described by the config's UCBFair section.
    FitFeatures {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize a finished run directory.
    Report {
        dir: PathBuf,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::InitConfig {
            preset,
            output_dir,
            seed,
            out,
        } => init_config(preset, output_dir, seed, &out),
        Command::TrainUcbfair { config } => run(&config, "ucbfair"),
        Command::RunGreedy { config } => run(&config, "greedy"),
        Command::Serve { config, tcp, sessions } => serve(&config, tcp, sessions),
        Command::PhasePortrait { config, thresholds, out } => portrait(&config, thresholds, &out),
        Command::Oracle {
            config,
            state,
            state_points,
            action_points,
        } => oracle(&config, &state, OracleResolution { state_points, action_points }),
        Command::FitFeatures { config, out } => fit_features(&config, &out),
        Command::Report { dir } => report(&dir),
    }
}

fn load(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::load(path).with_context(|| format!("loading config {}", path.display()))
}

fn init_config(preset: Preset, output_dir: PathBuf, seed: u64, out: &Path) -> Result<()> {
    let config = match preset {
        Preset::Fig1 => ExperimentConfig::fig1(output_dir, DisparityKind::DP, seed),
        Preset::Fig1Qr => ExperimentConfig::fig1(output_dir, DisparityKind::QR, seed),
        Preset::Greedy => {
            let mut c = ExperimentConfig::fig1(output_dir, DisparityKind::DP, seed);
            c.agent = AgentConfig::Greedy(fairdyn::greedy::GreedyConfig::new(0.5));
            c.episodes.episode_count = 20;
            c
        }
    };
    config.validate()?;
    let text = if out.extension().is_some_and(|e| e == "toml") {
        toml::to_string(&config)?
    } else {
        serde_json::to_string_pretty(&config)?
    };
    std::fs::write(out, text).with_context(|| format!("writing {}", out.display()))?;
    println!("wrote {}", out.display());
    Ok(())
}

fn run(path: &Path, expected: &str) -> Result<()> {
    let config = load(path)?;
    let kind = match config.agent {
        AgentConfig::Ucbfair(_) => "ucbfair",
        AgentConfig::Greedy(_) => "greedy",
        AgentConfig::External => "external",
    };
    if kind != expected {
        bail!("config describes a `{kind}` agent; this command runs `{expected}`");
    }
    let started = Instant::now();
    let outcome = experiment::run_experiment(&config)?;
    let m = &outcome.manifest;
    println!("wrote {}", config.output_dir.display());
    println!(
        "episodes {}  regret {:.4}  distortion {:.4}  contract violations {}",
        outcome.curve.len(),
        m.regret,
        m.distortion,
        m.contract_violations
    );
    print_evaluation(&outcome.evaluation);
    println!("elapsed {:.1}s", started.elapsed().as_secs_f64());
    Ok(())
}

fn print_evaluation(rows: &[experiment::EvaluationRow]) {
    if rows.is_empty() {
        return;
    }
    let n = rows.len() as f64;
    let mean_q = rows.iter().map(|r| r.end.iter().sum::<f64>() / r.end.len() as f64).sum::<f64>() / n;
    let gap = rows.iter().map(|r| (r.end[0] - r.end[1]).abs()).sum::<f64>() / n;
    println!("evaluation: {} runs, mean final q {mean_q:.4}, mean |q1-q2| {gap:.4}", rows.len());
}

fn serve(path: &Path, tcp: Option<String>, sessions: Option<usize>) -> Result<()> {
    let config = load(path)?;
    let env = config.build_env()?;
    let horizon = config.episodes.horizon;
    let seed = config.episodes.seed;
    match tcp {
        None => {
            let session = Session::new(env, horizon, seed)?;
            protocol::serve(session, BufReader::new(io::stdin()), io::stdout())?;
        }
        Some(addr) => {
            let listener = TcpListener::bind(&addr).with_context(|| format!("binding {addr}"))?;
            eprintln!("listening on {}", listener.local_addr()?);
            protocol::serve_tcp(
                listener,
                |i| Session::new(env.clone(), horizon, seed.wrapping_add(i as u64)),
                sessions,
            )?;
        }
    }
    Ok(())
}

fn portrait(path: &Path, thresholds: Option<Vec<f64>>, out: &Path) -> Result<()> {
    let config = load(path)?;
    let env = config.build_env()?;
    let mut policy: Box<dyn Policy> = match (thresholds, &config.agent) {
        (Some(t), _) => Box::new(FixedPolicy(ThresholdAction::new(t)?)),
        (None, AgentConfig::Greedy(g)) => Box::new(GreedyPolicy {
            env: env.clone(),
            config: *g,
        }),
        (None, _) => bail!("give --thresholds, or a greedy config (UCBFair portraits come from train-ucbfair)"),
    };
    let grid = phase_portrait(policy.as_mut(), &env, config.sweep, config.episodes.seed)?;
    let file = std::fs::File::create(out).with_context(|| format!("creating {}", out.display()))?;
    grid.write_csv(io::BufWriter::new(file))?;
    println!("wrote {} ({} cells)", out.display(), grid.cells.len());
    Ok(())
}

fn oracle(path: &Path, state: &[f64], resolution: OracleResolution) -> Result<()> {
    let config = load(path)?;
    let env = config.build_env()?;
    let e = config.episodes;
    let sol = oracle_optimal_value(&env, e.horizon, e.constraint_level, state, resolution)?;
    println!(
        "{}",
        serde_json::json!({
            "value_r": sol.value_r,
            "value_g": sol.value_g,
            "multiplier": sol.multiplier,
            "constraint_level": e.constraint_level,
            "actions": sol.actions,
        })
    );
    Ok(())
}

fn fit_features(path: &Path, out: &Path) -> Result<()> {
    let config = load(path)?;
    let AgentConfig::Ucbfair(settings) = &config.agent else {
        bail!("fit-features reads the UCBFair `features` section");
    };
    let mut env = config.build_env()?;
    let f = &settings.features;
    let mut rng = seed_rng(config.episodes.seed, "feature-rollouts");
    let buffer = collect_rollouts(&mut env, f.rollout_samples, config.episodes.horizon, &mut rng)?;
    let trained = train_feature_map(&buffer, &f.arch, &f.opt)?;
    let (mse_r, mse_g) = head_mse(&trained.map, &trained.heads, &buffer);
    trained.map.save(Some(&trained.heads), out)?;
    println!("wrote {}  reward-head MSE {mse_r:.3e}  utility-head MSE {mse_g:.3e}", out.display());
    Ok(())
}

fn report(dir: &Path) -> Result<()> {
    let manifest_path = dir.join(experiment::MANIFEST_FILE);
    let text = std::fs::read_to_string(&manifest_path).with_context(|| format!("reading {}", manifest_path.display()))?;
    let m: Manifest = serde_json::from_str(&text)?;
    println!("agent {}  seed {}  config {}", m.agent, m.seed, &m.config_hash[..12]);
    println!("regret {:.4}  distortion {:.4}  contract violations {}", m.regret, m.distortion, m.contract_violations);

    let eval_path = dir.join(experiment::EVALUATION_FILE);
    let mut reader = csv::Reader::from_path(&eval_path).with_context(|| format!("reading {}", eval_path.display()))?;
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let v: Vec<f64> = rec.iter().skip(1).map(str::parse).collect::<Result<_, _>>()?;
        rows.push(experiment::EvaluationRow {
            start: vec![v[0], v[1]],
            end: vec![v[2], v[3]],
            value_r: v[4],
            value_g: v[5],
        });
    }
    print_evaluation(&rows);
    for (name, digest) in &m.files {
        println!("  {name}  sha256 {}", &digest[..16]);
    }
    Ok(())
}
