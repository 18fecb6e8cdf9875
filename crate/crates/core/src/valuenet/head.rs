use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{Dense, ParamStore};

/// Maps a feature vector to one value per action.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Head {
    Plain(Dense),
    /// `Q = V + A − mean(A)`.
    Dueling {
        value: Dense,
        advantage: Dense,
    },
}

impl Head {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        features: usize,
        actions: usize,
        dueling: bool,
        rng: &mut R,
    ) -> Self {
        if dueling {
            Head::Dueling {
                value: Dense::new(store, "head.value", features, 1, true, rng),
                advantage: Dense::new(store, "head.advantage", features, actions, true, rng),
            }
        } else {
            Head::Plain(Dense::new(store, "head.out", features, actions, true, rng))
        }
    }

    pub fn forward(&self, p: &[f64], z: &[f64]) -> Vec<f64> {
        match self {
            Head::Plain(d) => d.forward(p, z),
            Head::Dueling { value, advantage } => {
                let v = value.forward(p, z)[0];
                dueling_combine(v, &advantage.forward(p, z))
            }
        }
    }

    pub fn backward(&self, p: &[f64], z: &[f64], dq: &[f64], g: &mut [f64]) -> Vec<f64> {
        match self {
            Head::Plain(d) => d.backward(p, z, dq, g),
            Head::Dueling { value, advantage } => {
                let total: f64 = dq.iter().sum();
                let mean = total / dq.len() as f64;
                let da: Vec<f64> = dq.iter().map(|d| d - mean).collect();
                let mut dz = value.backward(p, z, &[total], g);
                for (a, b) in dz.iter_mut().zip(advantage.backward(p, z, &da, g)) {
                    *a += b;
                }
                dz
            }
        }
    }
}

pub fn dueling_combine(value: f64, advantages: &[f64]) -> Vec<f64> {
    let mean = advantages.iter().sum::<f64>() / advantages.len() as f64;
    advantages.iter().map(|a| value + a - mean).collect()
}
