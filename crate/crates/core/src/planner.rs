//! Decision-time beam search over simulated rollouts with conservative
//! double-critic leaf values.

use std::cmp::Ordering;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::environment::Environment;
use crate::error::{ConfigError, EnvError};
use crate::learner::argmax;
use crate::valuenet::{QFunction, StateWindow};

/// Beam width `B` and depth `D`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeamConfig {
    pub width: usize,
    pub depth: usize,
}

impl BeamConfig {
    pub const fn new(width: usize, depth: usize) -> Self {
        Self { width, depth }
    }

    pub fn validate(&self, max_width: usize, max_depth: usize) -> Result<(), ConfigError> {
        if !(1..=max_width).contains(&self.width) {
            return Err(ConfigError::invalid("planner.width", format!("must lie in 1..={max_width}")));
        }
        if !(1..=max_depth).contains(&self.depth) {
            return Err(ConfigError::invalid("planner.depth", format!("must lie in 1..={max_depth}")));
        }
        Ok(())
    }
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self::new(2, 3)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlanOptions {
    /// With `(B, D) = (1, 1)`, skip rollouts and act greedily on the online critic.
    pub greedy_shortcut: bool,
    /// Rank intermediate prefixes by accumulated reward plus the discounted
    /// leaf value of their last state, rather than by reward alone.
    pub prefix_leaf: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    pub action: usize,
    /// Best sequence found and its score including the leaf term.
    pub sequence: Vec<usize>,
    pub score: f64,
    /// Number of simulated environment steps.
    pub rollouts: usize,
}

/// `max_a min(Q_online(s, a), Q_target(s, a))`.
pub fn leaf_value<F: QFunction + ?Sized>(window: &StateWindow, online: &F, target: &F) -> f64 {
    let qo = online.q_values(window);
    let qt = target.q_values(window);
    qo.iter().zip(&qt).map(|(a, b)| a.min(*b)).fold(f64::NEG_INFINITY, f64::max)
}

pub fn search_efficiency(width: usize, depth: usize, action_count: usize) -> f64 {
    100.0 * width as f64 / (action_count as f64).powi(depth as i32)
}

/// Upper bound on simulated steps for one call of [`beam_plan`].
pub fn node_budget(width: usize, depth: usize, action_count: usize) -> usize {
    width * depth * action_count
}

struct Element<S> {
    snapshot: S,
    window: StateWindow,
    prefix: Vec<usize>,
    score: f64,
    /// Ranking key; equals `score` plus any leaf term.
    key: f64,
    done: bool,
}

fn rank(a_score: f64, a_prefix: &[usize], b_score: f64, b_prefix: &[usize]) -> Ordering {
    b_score.total_cmp(&a_score).then_with(|| a_prefix.cmp(b_prefix))
}

/// Choose an action by beam search from the current state of `env`.
///
/// All rollouts run on a private copy with disturbances suppressed; `env`
/// itself is never stepped. `window` is the critic input for the current state.
pub fn beam_plan<E, F>(
    env: &E,
    window: &StateWindow,
    beam: BeamConfig,
    gamma: f64,
    online: &F,
    target: &F,
    options: PlanOptions,
) -> Result<PlanResult, EnvError>
where
    E: Environment,
    F: QFunction + ?Sized,
{
    if env.is_done() {
        return Err(EnvError::EpisodeDone);
    }
    let width = beam.width.max(1);
    let depth = beam.depth.max(1);
    if options.greedy_shortcut && width == 1 && depth == 1 {
        let q = online.q_values(window);
        let a = argmax(&q);
        return Ok(PlanResult { action: a, sequence: vec![a], score: q[a], rollouts: 0 });
    }

    let n = env.action_count();
    let mut sim = env.clone();
    sim.set_nominal(true);
    let mut rollouts = 0;
    let mut beam_set = vec![Element {
        snapshot: env.snapshot(),
        window: window.clone(),
        prefix: Vec::new(),
        score: 0.0,
        key: 0.0,
        done: false,
    }];

    for level in 0..depth {
        let discount = gamma.powi(level as i32);
        let last = level + 1 == depth;
        let mut children = Vec::with_capacity(beam_set.len() * n);
        for el in beam_set {
            if el.done {
                children.push(el);
                continue;
            }
            for a in 0..n {
                sim.restore(&el.snapshot)?;
                let step = sim.step(a)?;
                rollouts += 1;
                let mut prefix = el.prefix.clone();
                prefix.push(a);
                children.push(Element {
                    snapshot: sim.snapshot(),
                    window: el.window.push(Arc::from(step.observation)),
                    prefix,
                    score: el.score + discount * step.reward,
                    key: 0.0,
                    done: step.done,
                });
            }
        }
        // The final level is always ranked with leaf values; earlier levels only on request.
        let tail = gamma.powi(level as i32 + 1);
        for el in children.iter_mut() {
            el.key = el.score;
            if !el.done && (last || options.prefix_leaf) {
                el.key += tail * leaf_value(&el.window, online, target);
            }
        }
        if last {
            for el in children.iter_mut() {
                el.score = el.key;
            }
        }
        children.sort_by(|a, b| rank(a.key, &a.prefix, b.key, &b.prefix));
        children.truncate(width);
        beam_set = children;
    }

    let best = beam_set.into_iter().next().map(|el| (el.score, el.prefix));
    let (score, sequence) = best.expect("beam is never empty");
    Ok(PlanResult { action: sequence[0], sequence, score, rollouts })
}
