//! Action-value critics with hand-written reverse-mode gradients.

mod head;
mod mlp;
mod params;
mod transformer;

use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use head::{dueling_combine, Head};
pub use mlp::{Mlp, MlpTape};
pub use params::{polyak_update, Adam, Dense, Init, ParamGroup, ParamStore, Slot};
pub use transformer::{
    attention, positional_encoding, softmax, Pooling, Transformer, TransformerShape, TransformerTape,
};

use crate::error::LearnError;

/// The last `T_h` observations, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct StateWindow {
    states: Vec<Arc<[f64]>>,
}

impl StateWindow {
    /// A window at episode start: `first` repeated `len` times.
    pub fn new(len: usize, first: Arc<[f64]>) -> Self {
        assert!(len >= 1, "window length must be at least 1");
        Self { states: vec![first; len] }
    }

    pub fn from_states(states: Vec<Arc<[f64]>>) -> Self {
        assert!(!states.is_empty());
        Self { states }
    }

    /// Shift in a new observation, dropping the oldest.
    pub fn push(&self, next: Arc<[f64]>) -> Self {
        let mut states = Vec::with_capacity(self.states.len());
        states.extend(self.states[1..].iter().cloned());
        states.push(next);
        Self { states }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn latest(&self) -> &[f64] {
        self.states.last().expect("window is nonempty")
    }

    pub fn states(&self) -> &[Arc<[f64]>] {
        &self.states
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.states.iter().flat_map(|s| s.iter().copied()).collect()
    }
}

/// Anything that scores every action given a state window.
pub trait QFunction {
    fn action_count(&self) -> usize;
    fn q_values(&self, window: &StateWindow) -> Vec<f64>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
    pub dueling: bool,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self { hidden: vec![128, 128], dueling: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransformerConfig {
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub window: usize,
    pub pooling: Pooling,
    pub dueling: bool,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        let s = TransformerShape::default();
        Self {
            d_model: s.d_model,
            heads: s.heads,
            layers: s.layers,
            window: s.window,
            pooling: s.pooling,
            dueling: true,
        }
    }
}

impl TransformerConfig {
    pub fn shape(&self) -> TransformerShape {
        TransformerShape {
            d_model: self.d_model,
            heads: self.heads,
            layers: self.layers,
            window: self.window,
            pooling: self.pooling,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CriticConfig {
    Mlp(MlpConfig),
    Transformer(TransformerConfig),
}

impl Default for CriticConfig {
    fn default() -> Self {
        CriticConfig::Mlp(MlpConfig::default())
    }
}

impl CriticConfig {
    pub fn window_len(&self) -> usize {
        match self {
            CriticConfig::Mlp(_) => 1,
            CriticConfig::Transformer(t) => t.window,
        }
    }

    pub fn validate(&self) -> Result<(), crate::ConfigError> {
        use crate::ConfigError;
        match self {
            CriticConfig::Mlp(m) => {
                if m.hidden.contains(&0) {
                    return Err(ConfigError::invalid("critic.hidden", "layer widths must be positive"));
                }
            }
            CriticConfig::Transformer(t) => {
                if t.d_model == 0 || t.heads == 0 || t.d_model % t.heads != 0 {
                    return Err(ConfigError::invalid("critic.heads", "d_model must be a positive multiple of heads"));
                }
                if t.window == 0 {
                    return Err(ConfigError::invalid("critic.window", "must be at least 1"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QNetwork {
    Mlp(Mlp),
    Transformer(Transformer),
}

#[derive(Debug, Clone)]
pub enum Tape {
    Mlp(MlpTape),
    Transformer(TransformerTape),
}

impl QNetwork {
    pub fn new<R: Rng + ?Sized>(config: &CriticConfig, input_dim: usize, action_count: usize, rng: &mut R) -> Self {
        match config {
            CriticConfig::Mlp(m) => QNetwork::Mlp(Mlp::new(input_dim, &m.hidden, action_count, m.dueling, rng)),
            CriticConfig::Transformer(t) => {
                QNetwork::Transformer(Transformer::new(input_dim, &t.shape(), action_count, t.dueling, rng))
            }
        }
    }

    pub fn store(&self) -> &ParamStore {
        match self {
            QNetwork::Mlp(n) => &n.store,
            QNetwork::Transformer(n) => &n.store,
        }
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        match self {
            QNetwork::Mlp(n) => &mut n.store,
            QNetwork::Transformer(n) => &mut n.store,
        }
    }

    pub fn params(&self) -> &[f64] {
        &self.store().values
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.store_mut().values
    }

    pub fn param_count(&self) -> usize {
        self.store().len()
    }

    pub fn window_len(&self) -> usize {
        match self {
            QNetwork::Mlp(_) => 1,
            QNetwork::Transformer(n) => n.window(),
        }
    }

    pub fn forward_tape(&self, window: &StateWindow) -> (Vec<f64>, Tape) {
        match self {
            QNetwork::Mlp(n) => {
                let (q, t) = n.forward_tape(window.latest());
                (q, Tape::Mlp(t))
            }
            QNetwork::Transformer(n) => {
                let (q, t) = n.forward_tape(&window.flatten());
                (q, Tape::Transformer(t))
            }
        }
    }

    /// Accumulate `∂L/∂θ` into `grads` given `∂L/∂Q` for the taped input.
    pub fn backward(&self, tape: &Tape, dq: &[f64], grads: &mut [f64]) {
        match (self, tape) {
            (QNetwork::Mlp(n), Tape::Mlp(t)) => n.backward(t, dq, grads),
            (QNetwork::Transformer(n), Tape::Transformer(t)) => n.backward(t, dq, grads),
            _ => panic!("tape recorded by a different network kind"),
        }
    }
}

impl QFunction for QNetwork {
    fn action_count(&self) -> usize {
        match self {
            QNetwork::Mlp(n) => n.action_count(),
            QNetwork::Transformer(n) => n.action_count(),
        }
    }

    fn q_values(&self, window: &StateWindow) -> Vec<f64> {
        match self {
            QNetwork::Mlp(n) => n.forward(window.latest()),
            QNetwork::Transformer(n) => n.forward(&window.flatten()),
        }
    }
}

/// Largest relative discrepancy per parameter group between the analytic
/// gradient of `Σ_a w_a Q_a` and a central finite difference.
pub fn gradient_check(net: &QNetwork, window: &StateWindow, weights: &[f64], step: f64) -> Vec<(String, f64)> {
    let (_, tape) = net.forward_tape(window);
    let mut analytic = vec![0.0; net.param_count()];
    net.backward(&tape, weights, &mut analytic);
    let objective = |n: &QNetwork| -> f64 { n.q_values(window).iter().zip(weights).map(|(q, w)| q * w).sum() };
    let mut probe = net.clone();
    let mut report = Vec::new();
    for group in net.store().groups.clone() {
        let mut diff = 0.0;
        let mut scale = 0.0;
        for i in group.slot.range() {
            let orig = probe.params()[i];
            probe.params_mut()[i] = orig + step;
            let up = objective(&probe);
            probe.params_mut()[i] = orig - step;
            let down = objective(&probe);
            probe.params_mut()[i] = orig;
            let fd = (up - down) / (2.0 * step);
            diff += (fd - analytic[i]).powi(2);
            scale += fd.powi(2).max(analytic[i].powi(2));
        }
        let rel = if scale > 0.0 { (diff / scale).sqrt() } else { diff.sqrt() };
        report.push((group.name.clone(), rel));
    }
    report
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub online: QNetwork,
    pub target: QNetwork,
    pub optimizer: Adam,
}

impl Checkpoint {
    pub fn new(online: QNetwork, target: QNetwork, optimizer: Adam) -> Self {
        Self { version: CHECKPOINT_VERSION, online, target, optimizer }
    }

    pub fn to_json(&self) -> Result<String, LearnError> {
        serde_json::to_string(self).map_err(|e| LearnError::Checkpoint(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self, LearnError> {
        let c: Checkpoint = serde_json::from_str(s).map_err(|e| LearnError::Checkpoint(e.to_string()))?;
        if c.version != CHECKPOINT_VERSION {
            return Err(LearnError::Checkpoint(format!("unsupported checkpoint version {}", c.version)));
        }
        if !c.online.store().same_layout(c.target.store()) || c.optimizer.len() != c.online.param_count() {
            return Err(LearnError::LayoutMismatch);
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<(), LearnError> {
        std::fs::write(path, self.to_json()?).map_err(|e| LearnError::Checkpoint(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, LearnError> {
        let s = std::fs::read_to_string(path).map_err(|e| LearnError::Checkpoint(e.to_string()))?;
        Self::from_json(&s)
    }
}
