//! Frequency sweep: how the heuristic beam shape follows the reference speed.

use std::fs;

use anyhow::Context;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use metabeam_core::environment::{Environment, PendulumConfig, PendulumEnv, Reference};
use metabeam_core::meta::percentile;

use crate::config::AblationConfig;
use crate::metrics::{self, pearson};
use crate::runner::{run_episode, write_csv, Agent, EpisodeOptions, Policy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub frequency: f64,
    #[serde(rename = "mean_B")]
    pub mean_b: f64,
    #[serde(rename = "mean_D")]
    pub mean_d: f64,
    pub mean_err: f64,
    pub tracking_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub rows: Vec<AblationRow>,
    pub eps_ref: f64,
    /// `None` when a column has zero variance.
    pub rho_b: Option<f64>,
    pub rho_d: Option<f64>,
}

fn pendulum_for(base: &PendulumConfig, amplitude: f64, frequency: f64) -> PendulumConfig {
    PendulumConfig { reference: Reference::Sinusoid { amplitude, frequency }, ..base.clone() }
}

/// Trend magnitudes `|e_t − e_{t−1}|` under uniformly random actions,
/// pooled over every frequency.
pub fn calibration_trends(cfg: &AblationConfig, seed: u64) -> anyhow::Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(3);
    let mut out = Vec::new();
    for &f in &cfg.frequencies {
        let mut env = PendulumEnv::new(pendulum_for(&cfg.pendulum, cfg.amplitude, f))?;
        for _ in 0..cfg.calibration_episodes {
            env.reset();
            let mut prev = env.tracking_error();
            while !env.is_done() {
                env.step(rng.gen_range(0..env.action_count()))?;
                let e = env.tracking_error();
                out.push((e - prev).abs());
                prev = e;
            }
        }
    }
    Ok(out)
}

pub fn frequency_ablation(cfg: &AblationConfig) -> anyhow::Result<AblationResult> {
    cfg.validate()?;
    let eps_ref = match cfg.heuristic.eps_ref {
        Some(v) => v,
        None => percentile(&calibration_trends(cfg, cfg.seeds[0])?, cfg.heuristic.calibration_percentile),
    };
    let mut rows = Vec::with_capacity(cfg.frequencies.len());
    for &f in &cfg.frequencies {
        let pend = pendulum_for(&cfg.pendulum, cfg.amplitude, f);
        let (mut b, mut d, mut err, mut tracked) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for &seed in &cfg.seeds {
            let mut env = PendulumEnv::new(pend.clone())?;
            let mut agent = Agent::new(&cfg.critic, &cfg.train, env.observation_dim(), env.action_count(), seed);
            agent.plan = cfg.plan;
            let mut policy = Policy::Heuristic { config: cfg.heuristic.clone(), eps_ref };
            for ep in 0..cfg.episodes {
                run_episode(&mut env, &mut agent, &mut policy, EpisodeOptions::training(), ep, None)?;
            }
            for ep in 0..cfg.eval_episodes {
                let s = run_episode(&mut env, &mut agent, &mut policy, EpisodeOptions::evaluation(), ep, None)?;
                b.push(s.mean_b);
                d.push(s.mean_d);
                err.push(s.mean_err);
                tracked.push(100.0 * s.tracked);
            }
        }
        rows.push(AblationRow {
            frequency: f,
            mean_b: metrics::mean(&b),
            mean_d: metrics::mean(&d),
            mean_err: metrics::mean(&err),
            tracking_pct: metrics::mean(&tracked),
        });
    }
    let fs_: Vec<f64> = rows.iter().map(|r| r.frequency).collect();
    let bs: Vec<f64> = rows.iter().map(|r| r.mean_b).collect();
    let ds: Vec<f64> = rows.iter().map(|r| r.mean_d).collect();
    let result = AblationResult { eps_ref, rho_b: pearson(&fs_, &bs).ok(), rho_d: pearson(&fs_, &ds).ok(), rows };

    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    write_csv(&cfg.out.join("ablation.csv"), &result.rows)?;
    fs::write(cfg.out.join("ablation.json"), serde_json::to_string_pretty(&result)?)?;
    Ok(result)
}
