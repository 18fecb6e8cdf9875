//! Training and evaluation loops shared by every experiment.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::Context;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use metabeam_core::environment::{Environment, ManipulatorEnv, PendulumEnv};
use metabeam_core::learner::{argmax, epsilon, Learner, ReplayBuffer, TrainConfig, Transition};
use metabeam_core::meta::{
    heuristic_beam_rule, HeuristicConfig, MetaContext, MetaController, MetaFeedback, TrendTracker, FEATURE_DIM,
};
use metabeam_core::planner::{beam_plan, BeamConfig, PlanOptions};
use metabeam_core::valuenet::{CriticConfig, QFunction, QNetwork, StateWindow};

use crate::config::{EnvSection, ExperimentConfig, Variant};
use crate::metrics;

/// How actions are chosen outside warmup and exploration.
#[derive(Debug, Clone)]
pub enum Policy {
    /// Argmax of the online critic.
    Greedy,
    Fixed(BeamConfig),
    Heuristic {
        config: HeuristicConfig,
        eps_ref: f64,
    },
    Meta(Box<MetaController>),
}

impl Policy {
    fn plans(&self) -> bool {
        !matches!(self, Policy::Greedy)
    }
}

/// Critic, replay and the random streams for one seed.
#[derive(Debug, Clone)]
pub struct Agent {
    pub learner: Learner,
    pub buffer: ReplayBuffer,
    explore_rng: ChaCha8Rng,
    meta_rng: ChaCha8Rng,
    window_len: usize,
    /// Environment steps taken so far, across episodes.
    pub steps: u64,
    /// Calls into the beam planner.
    pub planner_calls: u64,
    pub plan: PlanOptions,
}

impl Agent {
    pub fn new(critic: &CriticConfig, train: &TrainConfig, obs_dim: usize, actions: usize, seed: u64) -> Self {
        let mut init = ChaCha8Rng::seed_from_u64(seed);
        let online = QNetwork::new(critic, obs_dim, actions, &mut init);
        let mut explore_rng = ChaCha8Rng::seed_from_u64(seed);
        explore_rng.set_stream(1);
        let mut meta_rng = ChaCha8Rng::seed_from_u64(seed);
        meta_rng.set_stream(2);
        Self {
            learner: Learner::new(online, train.clone()),
            buffer: ReplayBuffer::new(train.capacity, seed.wrapping_add(0x9e37_79b9)),
            explore_rng,
            meta_rng,
            window_len: critic.window_len(),
            steps: 0,
            planner_calls: 0,
            plan: PlanOptions::default(),
        }
    }

    /// Random generator for components built alongside the agent.
    pub fn meta_rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.meta_rng
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeOptions {
    pub train: bool,
    pub explore: bool,
    /// Steps with tracking error below this count as tracked.
    pub threshold: f64,
}

impl EpisodeOptions {
    pub fn training() -> Self {
        Self { train: true, explore: true, threshold: 0.1 }
    }

    pub fn evaluation() -> Self {
        Self { train: false, explore: false, threshold: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpisodeStats {
    pub ret: f64,
    pub mean_err: f64,
    pub mean_err_norm: f64,
    pub mean_b: f64,
    pub mean_d: f64,
    pub violations: usize,
    pub steps: usize,
    /// Fraction of steps with error below the threshold.
    pub tracked: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub episode: usize,
    pub t: usize,
    pub action: usize,
    pub error: f64,
    pub reward: f64,
    #[serde(rename = "B")]
    pub b: usize,
    #[serde(rename = "D")]
    pub d: usize,
    /// Meta telemetry; zero for other policies.
    pub r_meta: f64,
    pub lambda: f64,
    pub cost: f64,
    pub f_log_err: f64,
    pub f_trend: f64,
    pub f_disagreement: f64,
    pub f_entropy: f64,
    pub f_prev_b: f64,
    pub f_prev_d: f64,
    pub f_time: f64,
}

/// One row of `episodes.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub episode: usize,
    #[serde(rename = "return")]
    pub ret: f64,
    pub mean_err: f64,
    pub mean_err_norm: f64,
    #[serde(rename = "mean_B")]
    pub mean_b: f64,
    #[serde(rename = "mean_D")]
    pub mean_d: f64,
    pub violations: usize,
    pub wall_ms: u64,
}

/// Play one episode from a fresh reset.
pub fn run_episode<E: Environment>(
    env: &mut E,
    agent: &mut Agent,
    policy: &mut Policy,
    opts: EpisodeOptions,
    episode: usize,
    mut steps_out: Option<&mut Vec<StepRow>>,
) -> anyhow::Result<EpisodeStats> {
    let obs = env.reset();
    let mut window = StateWindow::new(agent.window_len, Arc::from(obs));
    let horizon = env.horizon() as f64;
    let n = env.action_count();
    let warmup = agent.learner.config.warmup_steps as u64;
    let gamma = agent.learner.config.gamma;

    let mut raw_trend = TrendTracker::new(match policy {
        Policy::Heuristic { config, .. } => config.trend_decay,
        _ => 0.0,
    });
    let mut meta_trend = TrendTracker::new(match policy {
        Policy::Meta(c) => c.config.trend_decay,
        _ => 0.0,
    });
    raw_trend.update(env.tracking_error());
    meta_trend.update(env.tracking_error());
    let scale = env.error_scale();

    let mut stats = EpisodeStats::default();
    let (mut sum_b, mut sum_d, mut tracked) = (0usize, 0usize, 0usize);
    while !env.is_done() {
        let e_prev = env.tracking_error();
        let trend_prev = meta_trend.value();
        let warm = opts.train && agent.steps < warmup;
        let explore =
            !warm && opts.explore && agent.explore_rng.gen::<f64>() < epsilon(agent.steps, &agent.learner.config);

        let mut z = BeamConfig::new(1, 1);
        let mut meta_decided = false;
        let action = if warm || explore {
            agent.explore_rng.gen_range(0..n)
        } else {
            let online = &agent.learner.online;
            let target = &agent.learner.target;
            z = match policy {
                Policy::Greedy => z,
                Policy::Fixed(b) => *b,
                Policy::Heuristic { config, eps_ref } => {
                    heuristic_beam_rule(env.tracking_error(), raw_trend.value(), *eps_ref, config)
                }
                Policy::Meta(ctl) => {
                    let qo = online.q_values(&window);
                    let qt = target.q_values(&window);
                    let ctx = MetaContext {
                        error: e_prev,
                        trend: trend_prev,
                        q_online: &qo,
                        q_target: &qt,
                        time_remaining: (horizon - env.time_index() as f64) / horizon,
                        scale,
                    };
                    meta_decided = true;
                    ctl.decide(&ctx, &mut agent.meta_rng)
                }
            };
            if policy.plans() {
                agent.planner_calls += 1;
                beam_plan(env, &window, z, gamma, online, target, agent.plan)?.action
            } else {
                argmax(&online.q_values(&window))
            }
        };

        let t = env.time_index();
        let step = env.step(action)?;
        agent.steps += 1;
        let next_window = window.push(Arc::from(step.observation));
        raw_trend.update(env.tracking_error());
        let trend = meta_trend.update(env.tracking_error());
        let mut telemetry = ([0.0; FEATURE_DIM], MetaFeedback { r_meta: 0.0, cost: 0.0, lambda: 0.0 });
        if meta_decided {
            if let Policy::Meta(ctl) = policy {
                let f = ctl.current_features().expect("decision pending");
                telemetry = (f.0, ctl.feedback(e_prev, env.tracking_error(), trend_prev, trend));
            }
        }

        if opts.train {
            agent.buffer.push(Transition {
                window: window.clone(),
                action,
                reward: step.reward,
                next_window: next_window.clone(),
                done: step.done,
            });
            let cfg = &agent.learner.config;
            if agent.steps >= warmup
                && agent.steps.is_multiple_of(cfg.train_every as u64)
                && agent.buffer.len() >= cfg.batch_size
            {
                agent.learner.train_step(&mut agent.buffer)?;
            }
        }
        window = next_window;

        let err = env.tracking_error();
        stats.ret += step.reward;
        stats.mean_err += err;
        stats.mean_err_norm += env.normalized_error();
        stats.violations += usize::from(step.violation);
        stats.steps += 1;
        sum_b += z.width;
        sum_d += z.depth;
        tracked += usize::from(err < opts.threshold);
        if let Some(rows) = steps_out.as_deref_mut() {
            let (f, fb) = telemetry;
            rows.push(StepRow {
                episode,
                t,
                action,
                error: err,
                reward: step.reward,
                b: z.width,
                d: z.depth,
                r_meta: fb.r_meta,
                lambda: fb.lambda,
                cost: fb.cost,
                f_log_err: f[0],
                f_trend: f[1],
                f_disagreement: f[2],
                f_entropy: f[3],
                f_prev_b: f[4],
                f_prev_d: f[5],
                f_time: f[6],
            });
        }
    }
    if let Policy::Meta(ctl) = policy {
        ctl.end_episode();
    }
    let k = stats.steps.max(1) as f64;
    stats.mean_err /= k;
    stats.mean_err_norm /= k;
    stats.mean_b = sum_b as f64 / k;
    stats.mean_d = sum_d as f64 / k;
    stats.tracked = tracked as f64 / k;
    Ok(stats)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub episodes: usize,
    /// Mean return over the last 50 episodes (or all, if fewer).
    pub final_return: f64,
    pub final_mean_err: f64,
    pub final_mean_err_norm: f64,
    pub tracking_efficiency: f64,
    pub convergence_episode: Option<usize>,
    pub mean_b: f64,
    pub mean_d: f64,
    pub violations: usize,
    pub planner_calls: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub variant: Option<Variant>,
    pub seeds: Vec<SeedSummary>,
    pub mean_final_return: f64,
    pub std_final_return: f64,
    pub mean_tracking_efficiency: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<ExperimentConfig>,
}

pub const FINAL_WINDOW: usize = 50;

pub fn summarize_seed(seed: u64, rows: &[EpisodeRow], planner_calls: Option<u64>) -> SeedSummary {
    let tail = &rows[rows.len().saturating_sub(FINAL_WINDOW)..];
    let col = |f: fn(&EpisodeRow) -> f64, rs: &[EpisodeRow]| rs.iter().map(f).collect::<Vec<_>>();
    let returns = col(|r| r.ret, rows);
    let final_err_norm = metrics::mean(&col(|r| r.mean_err_norm, tail));
    SeedSummary {
        seed,
        episodes: rows.len(),
        final_return: metrics::mean(&col(|r| r.ret, tail)),
        final_mean_err: metrics::mean(&col(|r| r.mean_err, tail)),
        final_mean_err_norm: final_err_norm,
        tracking_efficiency: metrics::tracking_efficiency(final_err_norm, 1.0),
        convergence_episode: metrics::convergence_episode(&returns, 0.95),
        mean_b: metrics::mean(&col(|r| r.mean_b, rows)),
        mean_d: metrics::mean(&col(|r| r.mean_d, rows)),
        violations: rows.iter().map(|r| r.violations).sum(),
        planner_calls,
    }
}

pub fn aggregate(
    variant: Option<Variant>,
    seeds: Vec<SeedSummary>,
    config: Option<ExperimentConfig>,
) -> ExperimentSummary {
    let finals: Vec<f64> = seeds.iter().map(|s| s.final_return).collect();
    let eff: Vec<f64> = seeds.iter().map(|s| s.tracking_efficiency).collect();
    ExperimentSummary {
        variant,
        mean_final_return: metrics::mean(&finals),
        std_final_return: metrics::sample_std(&finals),
        mean_tracking_efficiency: metrics::mean(&eff),
        seeds,
        config,
    }
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Header-only CSVs still need their header line when there are no rows.
fn write_episode_csv(path: &Path, rows: &[EpisodeRow]) -> anyhow::Result<()> {
    if rows.is_empty() {
        fs::write(path, "episode,return,mean_err,mean_err_norm,mean_B,mean_D,violations,wall_ms\n")?;
        return Ok(());
    }
    write_csv(path, rows)
}

pub fn read_episode_csv(path: &Path) -> anyhow::Result<Vec<EpisodeRow>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let mut rows = Vec::new();
    for rec in r.deserialize() {
        rows.push(rec.with_context(|| format!("parsing {}", path.display()))?);
    }
    Ok(rows)
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed_{seed}"))
}

/// Everything produced by one seed of `run_experiment`.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub rows: Vec<EpisodeRow>,
    pub summary: SeedSummary,
    pub agent: Agent,
}

fn make_policy(cfg: &ExperimentConfig, actions: usize, agent: &mut Agent) -> Policy {
    match cfg.variant {
        Variant::Ddqn | Variant::Transformer => Policy::Greedy,
        Variant::BeamFixed => Policy::Fixed(cfg.planner.expect("validated")),
        Variant::Meta => {
            let meta = cfg.meta.clone().expect("validated");
            Policy::Meta(Box::new(MetaController::new(meta, actions, agent.meta_rng())))
        }
    }
}

fn train_seed<E: Environment>(cfg: &ExperimentConfig, mut env: E, seed: u64, dir: &Path) -> anyhow::Result<SeedRun> {
    let mut agent = Agent::new(&cfg.critic, &cfg.train, env.observation_dim(), env.action_count(), seed);
    agent.plan = cfg.plan;
    let mut policy = make_policy(cfg, env.action_count(), &mut agent);
    let mut rows = Vec::with_capacity(cfg.episodes);
    let mut steps = if cfg.steps_csv { Some(Vec::new()) } else { None };
    for ep in 0..cfg.episodes {
        let start = Instant::now();
        let s = run_episode(&mut env, &mut agent, &mut policy, EpisodeOptions::training(), ep, steps.as_mut())?;
        let wall_ms = if cfg.timing { start.elapsed().as_millis() as u64 } else { 0 };
        rows.push(EpisodeRow {
            episode: ep,
            ret: s.ret,
            mean_err: s.mean_err,
            mean_err_norm: s.mean_err_norm,
            mean_b: s.mean_b,
            mean_d: s.mean_d,
            violations: s.violations,
            wall_ms,
        });
        if let Some(every) = cfg.checkpoint_every {
            if (ep + 1) % every == 0 {
                agent.learner.checkpoint().save(&dir.join("checkpoint.json"))?;
            }
        }
    }
    write_episode_csv(&dir.join("episodes.csv"), &rows)?;
    if let Some(steps) = steps {
        write_csv(&dir.join("steps.csv"), &steps)?;
    }
    let summary = summarize_seed(seed, &rows, Some(agent.planner_calls));
    Ok(SeedRun { rows, summary, agent })
}

/// Run one seed of an experiment, writing its CSVs under `out/seed_<s>/`.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> anyhow::Result<SeedRun> {
    let dir = seed_dir(&cfg.out, seed);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    match &cfg.env {
        EnvSection::Manipulator { config, curve } => {
            let mut c = config.clone();
            c.seed = seed;
            train_seed(cfg, ManipulatorEnv::new(&c, curve)?, seed, &dir)
        }
        EnvSection::Pendulum { config } => train_seed(cfg, PendulumEnv::new(config.clone())?, seed, &dir),
    }
}

/// Train every seed and write `summary.json`.
pub fn run_experiment(cfg: &ExperimentConfig) -> anyhow::Result<ExperimentSummary> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    let mut seeds = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        seeds.push(run_seed(cfg, seed)?.summary);
    }
    let summary = aggregate(Some(cfg.variant), seeds, Some(cfg.clone()));
    fs::write(cfg.out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

/// Rebuild a summary from the `episodes.csv` files under `dir`.
pub fn summarize_dir(dir: &Path) -> anyhow::Result<ExperimentSummary> {
    let mut entries: Vec<(u64, PathBuf)> = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        let seed = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("seed_"))
            .and_then(|s| s.parse().ok());
        if let Some(seed) = seed {
            if path.join("episodes.csv").is_file() {
                entries.push((seed, path));
            }
        }
    }
    anyhow::ensure!(!entries.is_empty(), "no seed_*/episodes.csv under {}", dir.display());
    entries.sort();
    let mut seeds = Vec::new();
    for (seed, path) in entries {
        seeds.push(summarize_seed(seed, &read_episode_csv(&path.join("episodes.csv"))?, None));
    }
    let variant = fs::read_to_string(dir.join("summary.json"))
        .ok()
        .and_then(|s| serde_json::from_str::<ExperimentSummary>(&s).ok())
        .and_then(|s| s.variant);
    Ok(aggregate(variant, seeds, None))
}
