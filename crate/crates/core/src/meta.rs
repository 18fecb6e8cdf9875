//! Online selection of the beam width and depth.
//!
//! A small softmax policy over the `(B, D)` menu is trained by REINFORCE on
//! a shaped reward that trades tracking improvement against planning cost,
//! with a dual variable enforcing a compute budget. A deterministic rule
//! driven by the error trend is provided for ablations.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::planner::{node_budget, BeamConfig};
use crate::valuenet::{softmax, Dense, ParamStore};

pub const FEATURE_DIM: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cadence {
    PerStep,
    PerEpisode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetaConfig {
    pub max_width: usize,
    pub max_depth: usize,
    pub alpha_e: f64,
    pub alpha_eps: f64,
    pub alpha_f: f64,
    pub alpha_s: f64,
    pub lambda0: f64,
    pub eta_lambda: f64,
    /// Compute budget in cost units; defaults to `α_f · node_budget(2, 2, |A|)`.
    pub budget: Option<f64>,
    pub beta: f64,
    pub lr: f64,
    pub gamma_m: f64,
    pub temperature: f64,
    pub mad_floor: f64,
    pub baseline_decay: f64,
    pub hidden: usize,
    /// Smoothing of the one-step error difference used as a feature.
    pub trend_decay: f64,
    pub cadence: Cadence,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            max_width: 6,
            max_depth: 6,
            alpha_e: 10.0,
            alpha_eps: 5.0,
            alpha_f: 1e-4,
            alpha_s: 0.02,
            lambda0: 0.01,
            eta_lambda: 1e-3,
            budget: None,
            beta: 0.01,
            lr: 1e-3,
            gamma_m: 0.95,
            temperature: 1.0,
            mad_floor: 1e-3,
            baseline_decay: 0.99,
            hidden: 64,
            trend_decay: 0.9,
            cadence: Cadence::PerStep,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.max_width == 0 || self.max_depth == 0 {
            return Err(ConfigError::invalid("meta.max_width", "menu bounds must be positive"));
        }
        let rates = [
            ("meta.alpha_e", self.alpha_e),
            ("meta.alpha_eps", self.alpha_eps),
            ("meta.alpha_f", self.alpha_f),
            ("meta.alpha_s", self.alpha_s),
            ("meta.lambda0", self.lambda0),
            ("meta.eta_lambda", self.eta_lambda),
            ("meta.beta", self.beta),
            ("meta.lr", self.lr),
        ];
        for (name, v) in rates {
            if !(v >= 0.0) {
                return Err(ConfigError::invalid(name, "must be nonnegative"));
            }
        }
        if !(self.temperature > 0.0) {
            return Err(ConfigError::invalid("meta.temperature", "must be positive"));
        }
        if !(self.mad_floor > 0.0) {
            return Err(ConfigError::invalid("meta.mad_floor", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.baseline_decay) || !(0.0..1.0).contains(&self.trend_decay) {
            return Err(ConfigError::invalid("meta.baseline_decay", "decays must lie in [0, 1)"));
        }
        if self.hidden == 0 {
            return Err(ConfigError::invalid("meta.hidden", "must be positive"));
        }
        Ok(())
    }

    pub fn budget_for(&self, action_count: usize) -> f64 {
        self.budget.unwrap_or(self.alpha_f * node_budget(2, 2, action_count) as f64)
    }

    pub fn menu(&self) -> Vec<BeamConfig> {
        menu(self.max_width, self.max_depth)
    }
}

/// Every `(B, D)` with `1 ≤ B ≤ max_width`, `1 ≤ D ≤ max_depth`, row-major in `B`.
pub fn menu(max_width: usize, max_depth: usize) -> Vec<BeamConfig> {
    (1..=max_width).flat_map(|b| (1..=max_depth).map(move |d| BeamConfig::new(b, d))).collect()
}

pub fn menu_index(z: BeamConfig, max_depth: usize) -> usize {
    (z.width - 1) * max_depth + (z.depth - 1)
}

/// Entropy of `softmax(q / τ)` divided by `log |A|`.
pub fn normalized_entropy(q: &[f64], temperature: f64) -> f64 {
    let p = softmax(&q.iter().map(|v| v / temperature).collect::<Vec<_>>());
    let h: f64 = p.iter().filter(|x| **x > 0.0).map(|x| -x * x.ln()).sum();
    (h / (q.len() as f64).ln()).clamp(0.0, 1.0)
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median absolute deviation from the median.
pub fn mad(values: &[f64]) -> f64 {
    let m = median(values);
    median(&values.iter().map(|v| (v - m).abs()).collect::<Vec<_>>())
}

/// `tanh(mean |Q_on − Q_tg| / (MAD(Q_on) + δ))`.
pub fn disagreement(q_online: &[f64], q_target: &[f64], floor: f64) -> f64 {
    assert_eq!(q_online.len(), q_target.len());
    let u = q_online.iter().zip(q_target).map(|(a, b)| (a - b).abs()).sum::<f64>() / q_online.len() as f64;
    // tanh rounds to exactly 1 for large ratios; keep the open upper bound.
    (u / (mad(q_online) + floor)).tanh().min(1.0 - f64::EPSILON / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetaFeatures(pub [f64; FEATURE_DIM]);

/// Assemble the feature vector. `scale` normalizes the trend (the error
/// saturation radius); `time_remaining` is `(T − t)/T`.
#[allow(clippy::too_many_arguments)]
pub fn build_features(
    error: f64,
    trend: f64,
    disagreement: f64,
    entropy: f64,
    prev: BeamConfig,
    time_remaining: f64,
    scale: f64,
    cfg: &MetaConfig,
) -> MetaFeatures {
    MetaFeatures([
        error.ln_1p(),
        trend.abs() / scale,
        disagreement,
        entropy,
        prev.width as f64 / cfg.max_width as f64,
        prev.depth as f64 / cfg.max_depth as f64,
        time_remaining,
    ])
}

/// Exponentially smoothed one-step change of the tracking error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrendTracker {
    decay: f64,
    prev_error: Option<f64>,
    value: f64,
}

impl TrendTracker {
    pub fn new(decay: f64) -> Self {
        Self { decay, prev_error: None, value: 0.0 }
    }

    pub fn reset(&mut self) {
        self.prev_error = None;
        self.value = 0.0;
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn update(&mut self, error: f64) -> f64 {
        let diff = self.prev_error.map_or(0.0, |p| error - p);
        self.prev_error = Some(error);
        self.value = self.decay * self.value + (1.0 - self.decay) * diff;
        self.value
    }
}

/// Improvement term and cost; the shaped reward is `Δ − λ·cost`.
#[allow(clippy::too_many_arguments)]
pub fn meta_reward(
    e_prev: f64,
    e: f64,
    trend_prev: f64,
    trend: f64,
    z: BeamConfig,
    z_prev: BeamConfig,
    lambda: f64,
    action_count: usize,
    cfg: &MetaConfig,
) -> (f64, f64) {
    let improvement = cfg.alpha_e * (e_prev - e) + cfg.alpha_eps * (trend_prev.abs() - trend.abs());
    let switches = z.width.abs_diff(z_prev.width) + z.depth.abs_diff(z_prev.depth);
    let cost = cfg.alpha_f * node_budget(z.width, z.depth, action_count) as f64 + cfg.alpha_s * switches as f64;
    (improvement - lambda * cost, cost)
}

/// Projected dual ascent on the budget constraint.
pub fn dual_update(lambda: f64, cost: f64, eta: f64, budget: f64) -> f64 {
    (lambda + eta * (cost - budget)).max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeuristicConfig {
    pub k_b: f64,
    pub k_d: f64,
    /// Trend magnitude that saturates the rule. Calibrated when absent.
    pub eps_ref: Option<f64>,
    pub max_width: usize,
    pub max_depth: usize,
    /// Smoothing applied to the error difference fed to the rule.
    pub trend_decay: f64,
    /// Percentile of the calibration trend magnitudes used as `eps_ref`.
    pub calibration_percentile: f64,
}

impl Default for HeuristicConfig {
    fn default() -> Self {
        Self {
            k_b: 1.0,
            k_d: 1.0,
            eps_ref: None,
            max_width: 6,
            max_depth: 6,
            trend_decay: 0.0,
            calibration_percentile: 95.0,
        }
    }
}

/// Deterministic rule: a steeper error trend buys a wider, shallower beam.
/// The error level itself does not enter the rule.
pub fn heuristic_beam_rule(_error: f64, trend: f64, eps_ref: f64, cfg: &HeuristicConfig) -> BeamConfig {
    let m = if eps_ref > 0.0 { (trend.abs() / eps_ref).min(1.0) } else { 1.0 };
    let bmax = cfg.max_width as f64;
    let dmax = cfg.max_depth as f64;
    let b = (1.0 + cfg.k_b * m * (bmax - 1.0)).round().clamp(1.0, bmax);
    let d = (dmax - cfg.k_d * m * (dmax - 1.0)).round().clamp(1.0, dmax);
    BeamConfig::new(b as usize, d as usize)
}

/// Linear-interpolated percentile, `pct` in [0, 100].
pub fn percentile(values: &[f64], pct: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return 0.0;
    }
    let rank = pct.clamp(0.0, 100.0) / 100.0 * (v.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (rank - lo as f64)
}

/// Two-layer softmax policy over the `(B, D)` menu.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaPolicy {
    pub store: ParamStore,
    hidden: Dense,
    output: Dense,
    menu: Vec<BeamConfig>,
    max_depth: usize,
}

impl MetaPolicy {
    pub fn new<R: Rng + ?Sized>(cfg: &MetaConfig, rng: &mut R) -> Self {
        let menu = cfg.menu();
        let mut store = ParamStore::default();
        let hidden = Dense::new(&mut store, "meta.hidden", FEATURE_DIM, cfg.hidden, true, rng);
        let output = Dense::new(&mut store, "meta.output", cfg.hidden, menu.len(), true, rng);
        Self { store, hidden, output, menu, max_depth: cfg.max_depth }
    }

    pub fn menu(&self) -> &[BeamConfig] {
        &self.menu
    }

    pub fn index_of(&self, z: BeamConfig) -> usize {
        menu_index(z, self.max_depth)
    }

    fn hidden_pre(&self, f: &MetaFeatures) -> Vec<f64> {
        self.hidden.forward(&self.store.values, &f.0)
    }

    pub fn logits(&self, f: &MetaFeatures) -> Vec<f64> {
        let h: Vec<f64> = self.hidden_pre(f).iter().map(|v| v.max(0.0)).collect();
        self.output.forward(&self.store.values, &h)
    }

    pub fn probabilities(&self, f: &MetaFeatures) -> Vec<f64> {
        softmax(&self.logits(f))
    }

    pub fn log_prob(&self, f: &MetaFeatures, index: usize) -> f64 {
        let l = self.logits(f);
        let max = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + l.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        l[index] - lse
    }

    pub fn entropy(&self, f: &MetaFeatures) -> f64 {
        self.probabilities(f).iter().filter(|p| **p > 0.0).map(|p| -p * p.ln()).sum()
    }

    /// Categorical draw. Returns the menu index, its entry and log-probability.
    pub fn sample<R: Rng + ?Sized>(&self, f: &MetaFeatures, rng: &mut R) -> (usize, BeamConfig, f64) {
        let p = self.probabilities(f);
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut idx = p.len() - 1;
        for (i, pi) in p.iter().enumerate() {
            acc += pi;
            if u < acc {
                idx = i;
                break;
            }
        }
        (idx, self.menu[idx], p[idx].ln())
    }

    fn backprop(&self, f: &MetaFeatures, dlogits: &[f64]) -> Vec<f64> {
        let p = &self.store.values;
        let pre = self.hidden_pre(f);
        let h: Vec<f64> = pre.iter().map(|v| v.max(0.0)).collect();
        let mut g = vec![0.0; self.store.len()];
        let dh = self.output.backward(p, &h, dlogits, &mut g);
        let dpre: Vec<f64> = pre.iter().zip(&dh).map(|(z, d)| if *z > 0.0 { *d } else { 0.0 }).collect();
        self.hidden.backward(p, &f.0, &dpre, &mut g);
        g
    }

    /// `∇_φ log π(index | f)`.
    pub fn log_prob_gradient(&self, f: &MetaFeatures, index: usize) -> Vec<f64> {
        let mut d: Vec<f64> = self.probabilities(f).iter().map(|p| -p).collect();
        d[index] += 1.0;
        self.backprop(f, &d)
    }

    /// `∇_φ H(π(·| f))`.
    pub fn entropy_gradient(&self, f: &MetaFeatures) -> Vec<f64> {
        let p = self.probabilities(f);
        let h: f64 = p.iter().filter(|x| **x > 0.0).map(|x| -x * x.ln()).sum();
        let d: Vec<f64> = p.iter().map(|pk| if *pk > 0.0 { -pk * (pk.ln() + h) } else { 0.0 }).collect();
        self.backprop(f, &d)
    }
}

/// One policy-gradient ascent step. Returns the updated baseline, which is
/// refreshed after the advantage is formed.
pub fn reinforce_update(
    policy: &mut MetaPolicy,
    f: &MetaFeatures,
    index: usize,
    r_meta: f64,
    baseline: f64,
    cfg: &MetaConfig,
) -> f64 {
    let advantage = r_meta - baseline;
    if advantage != 0.0 || cfg.beta != 0.0 {
        let glp = policy.log_prob_gradient(f, index);
        let gh = if cfg.beta != 0.0 { policy.entropy_gradient(f) } else { vec![0.0; glp.len()] };
        for ((w, a), b) in policy.store.values.iter_mut().zip(&glp).zip(&gh) {
            *w += cfg.lr * (advantage * a + cfg.beta * b);
        }
    }
    cfg.baseline_decay * baseline + (1.0 - cfg.baseline_decay) * r_meta
}

/// Critic-side signals available at decision time.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaContext<'a> {
    pub error: f64,
    pub trend: f64,
    pub q_online: &'a [f64],
    pub q_target: &'a [f64],
    pub time_remaining: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetaFeedback {
    pub r_meta: f64,
    pub cost: f64,
    pub lambda: f64,
}

/// Stateful wrapper tying the policy, baseline and dual variable together.
#[derive(Debug, Clone)]
pub struct MetaController {
    pub policy: MetaPolicy,
    pub config: MetaConfig,
    pub baseline: f64,
    pub lambda: f64,
    action_count: usize,
    prev: BeamConfig,
    current: Option<(MetaFeatures, usize, BeamConfig)>,
    episode_reward: f64,
    episode_cost: f64,
    episode_steps: usize,
}

impl MetaController {
    pub fn new<R: Rng + ?Sized>(config: MetaConfig, action_count: usize, rng: &mut R) -> Self {
        Self {
            policy: MetaPolicy::new(&config, rng),
            lambda: config.lambda0,
            config,
            baseline: 0.0,
            action_count,
            prev: BeamConfig::new(1, 1),
            current: None,
            episode_reward: 0.0,
            episode_cost: 0.0,
            episode_steps: 0,
        }
    }

    pub fn previous(&self) -> BeamConfig {
        self.prev
    }

    /// Features behind the most recent decision, if one is pending.
    pub fn current_features(&self) -> Option<MetaFeatures> {
        self.current.map(|(f, _, _)| f)
    }

    pub fn decide<R: Rng + ?Sized>(&mut self, ctx: &MetaContext, rng: &mut R) -> BeamConfig {
        if self.config.cadence == Cadence::PerEpisode {
            if let Some((_, _, z)) = self.current {
                return z;
            }
        }
        let h = normalized_entropy(ctx.q_online, self.config.temperature);
        let u = disagreement(ctx.q_online, ctx.q_target, self.config.mad_floor);
        let f = build_features(ctx.error, ctx.trend, u, h, self.prev, ctx.time_remaining, ctx.scale, &self.config);
        let (idx, z, _) = self.policy.sample(&f, rng);
        self.current = Some((f, idx, z));
        z
    }

    /// Score the last decision once its effect on the error is known.
    pub fn feedback(&mut self, e_prev: f64, e: f64, trend_prev: f64, trend: f64) -> MetaFeedback {
        let (f, idx, z) = self.current.expect("feedback without a decision");
        let (r, cost) =
            meta_reward(e_prev, e, trend_prev, trend, z, self.prev, self.lambda, self.action_count, &self.config);
        self.prev = z;
        let budget = self.config.budget_for(self.action_count);
        match self.config.cadence {
            Cadence::PerStep => {
                self.baseline = reinforce_update(&mut self.policy, &f, idx, r, self.baseline, &self.config);
                self.lambda = dual_update(self.lambda, cost, self.config.eta_lambda, budget);
                self.current = None;
            }
            Cadence::PerEpisode => {
                self.episode_reward += r;
                self.episode_cost += cost;
                self.episode_steps += 1;
            }
        }
        MetaFeedback { r_meta: r, cost, lambda: self.lambda }
    }

    /// Close the episode. In per-episode mode this applies the update.
    pub fn end_episode(&mut self) {
        if self.config.cadence == Cadence::PerEpisode && self.episode_steps > 0 {
            if let Some((f, idx, _)) = self.current {
                let r = self.episode_reward;
                let cost = self.episode_cost / self.episode_steps as f64;
                self.baseline = reinforce_update(&mut self.policy, &f, idx, r, self.baseline, &self.config);
                let budget = self.config.budget_for(self.action_count);
                self.lambda = dual_update(self.lambda, cost, self.config.eta_lambda, budget);
            }
        }
        self.current = None;
        self.episode_reward = 0.0;
        self.episode_cost = 0.0;
        self.episode_steps = 0;
        self.prev = BeamConfig::new(1, 1);
    }
}
