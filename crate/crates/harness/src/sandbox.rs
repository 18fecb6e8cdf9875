//! Fixed-beam accuracy and efficiency table on the one-joint sandbox.

use std::fs;

use anyhow::Context;
use serde::{Deserialize, Serialize};

use metabeam_core::environment::{Environment, PendulumConfig, PendulumEnv, Reference};
use metabeam_core::planner::search_efficiency;

use crate::config::{SandboxConfig, SandboxShapes};
use crate::metrics;
use crate::runner::{run_episode, write_csv, Agent, EpisodeOptions, Policy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandboxRow {
    pub curve: String,
    #[serde(rename = "B")]
    pub b: usize,
    #[serde(rename = "D")]
    pub d: usize,
    pub tracking_pct: f64,
    pub search_efficiency: f64,
    pub mean_err: f64,
}

/// The three reference shapes, by curve-type name.
pub fn shapes(s: &SandboxShapes) -> [(&'static str, Reference); 3] {
    [
        ("straight", Reference::Sinusoid { amplitude: s.amplitude, frequency: 0.0 }),
        ("single_curve", Reference::Sinusoid { amplitude: s.amplitude, frequency: s.single_curve_frequency }),
        (
            "nonuniform_wave",
            Reference::TwoTone { amplitude: s.amplitude, frequency: s.wave_frequency, ratio: s.wave_ratio },
        ),
    ]
}

/// Train a critic on one reference with the given behaviour policy.
fn train(
    cfg: &SandboxConfig,
    pend: &PendulumConfig,
    mut policy: Policy,
    seed: u64,
) -> anyhow::Result<(PendulumEnv, Agent)> {
    let mut env = PendulumEnv::new(pend.clone())?;
    let mut agent = Agent::new(&cfg.critic, &cfg.train, env.observation_dim(), env.action_count(), seed);
    agent.plan = cfg.plan;
    for ep in 0..cfg.episodes {
        run_episode(&mut env, &mut agent, &mut policy, EpisodeOptions::training(), ep, None)?;
    }
    Ok((env, agent))
}

pub fn sandbox_sweep(cfg: &SandboxConfig) -> anyhow::Result<Vec<SandboxRow>> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for (name, reference) in shapes(&cfg.shapes) {
        let pend = PendulumConfig { reference, ..cfg.pendulum.clone() };
        let mut tracked = vec![Vec::new(); cfg.beams.len()];
        let mut errors = vec![Vec::new(); cfg.beams.len()];
        for &seed in &cfg.seeds {
            let opts = EpisodeOptions { threshold: cfg.threshold, ..EpisodeOptions::evaluation() };
            let shared = if cfg.train_per_beam { None } else { Some(train(cfg, &pend, Policy::Greedy, seed)?) };
            for (i, beam) in cfg.beams.iter().enumerate() {
                let mut policy = Policy::Fixed(*beam);
                let (mut env, mut agent) = match &shared {
                    Some(pair) => pair.clone(),
                    None => train(cfg, &pend, policy.clone(), seed)?,
                };
                for ep in 0..cfg.eval_episodes {
                    let s = run_episode(&mut env, &mut agent, &mut policy, opts, ep, None)?;
                    tracked[i].push(100.0 * s.tracked);
                    errors[i].push(s.mean_err);
                }
            }
        }
        for (i, beam) in cfg.beams.iter().enumerate() {
            rows.push(SandboxRow {
                curve: name.to_string(),
                b: beam.width,
                d: beam.depth,
                tracking_pct: metrics::mean(&tracked[i]),
                search_efficiency: search_efficiency(beam.width, beam.depth, cfg.pendulum.torques.len()),
                mean_err: metrics::mean(&errors[i]),
            });
        }
    }
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    write_csv(&cfg.out.join("sandbox.csv"), &rows)?;
    Ok(rows)
}
