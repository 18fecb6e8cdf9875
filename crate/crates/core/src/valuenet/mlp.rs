use rand::Rng;
use serde::{Deserialize, Serialize};

use super::head::Head;
use super::params::{relu, relu_backward, Dense, ParamStore};

/// Feedforward critic on the latest state: ReLU hidden layers then a head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub store: ParamStore,
    layers: Vec<Dense>,
    head: Head,
    input_dim: usize,
    action_count: usize,
}

#[derive(Debug, Clone)]
pub struct MlpTape {
    input: Vec<f64>,
    /// Pre-activation of each hidden layer.
    pre: Vec<Vec<f64>>,
    /// Input to the head.
    features: Vec<f64>,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        action_count: usize,
        dueling: bool,
        rng: &mut R,
    ) -> Self {
        let mut store = ParamStore::default();
        let mut layers = Vec::new();
        let mut width = input_dim;
        for (i, &h) in hidden.iter().enumerate() {
            layers.push(Dense::new(&mut store, &format!("hidden{i}"), width, h, true, rng));
            width = h;
        }
        let head = Head::new(&mut store, width, action_count, dueling, rng);
        Self { store, layers, head, input_dim, action_count }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn action_count(&self) -> usize {
        self.action_count
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let p = &self.store.values;
        let mut h = x.to_vec();
        for layer in &self.layers {
            h = relu(&layer.forward(p, &h));
        }
        self.head.forward(p, &h)
    }

    pub fn forward_tape(&self, x: &[f64]) -> (Vec<f64>, MlpTape) {
        let p = &self.store.values;
        let mut h = x.to_vec();
        let mut pre = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let z = layer.forward(p, &h);
            h = relu(&z);
            pre.push(z);
        }
        let q = self.head.forward(p, &h);
        (q, MlpTape { input: x.to_vec(), pre, features: h })
    }

    pub fn backward(&self, tape: &MlpTape, dq: &[f64], g: &mut [f64]) {
        let p = &self.store.values;
        let mut dh = self.head.backward(p, &tape.features, dq, g);
        for i in (0..self.layers.len()).rev() {
            let dz = relu_backward(&tape.pre[i], &dh);
            let input = if i == 0 { &tape.input } else { &relu(&tape.pre[i - 1]) };
            dh = self.layers[i].backward(p, input, &dz, g);
        }
    }
}
