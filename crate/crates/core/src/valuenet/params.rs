//! Flat parameter storage, dense-layer kernels and the optimizer.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// A named block of the flat parameter vector, row-major `rows × cols`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Slot {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }

    pub fn of<'a>(&self, values: &'a [f64]) -> &'a [f64] {
        &values[self.range()]
    }

    pub fn of_mut<'a>(&self, values: &'a mut [f64]) -> &'a mut [f64] {
        &mut values[self.range()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamGroup {
    pub name: String,
    pub slot: Slot,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform in `±1/√fan_in`.
    FanIn(usize),
}

/// All trainable values of one network in a single vector.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamStore {
    pub values: Vec<f64>,
    pub groups: Vec<ParamGroup>,
}

impl ParamStore {
    pub fn add<R: Rng + ?Sized>(&mut self, name: &str, rows: usize, cols: usize, init: Init, rng: &mut R) -> Slot {
        let slot = Slot { offset: self.values.len(), rows, cols };
        match init {
            Init::Zeros => self.values.resize(slot.offset + slot.len(), 0.0),
            Init::Ones => self.values.resize(slot.offset + slot.len(), 1.0),
            Init::FanIn(fan_in) => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                self.values.extend((0..slot.len()).map(|_| rng.gen_range(-bound..bound)));
            }
        }
        self.groups.push(ParamGroup { name: name.to_string(), slot });
        slot
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn group(&self, name: &str) -> Option<&ParamGroup> {
        self.groups.iter().find(|g| g.name == name)
    }

    pub fn same_layout(&self, other: &ParamStore) -> bool {
        self.groups == other.groups && self.values.len() == other.values.len()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Weight and bias of an affine map `out × in`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Slot,
    pub bias: Option<Slot>,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        outputs: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(&format!("{name}.weight"), outputs, inputs, Init::FanIn(inputs), rng);
        let bias = bias.then(|| store.add(&format!("{name}.bias"), 1, outputs, Init::FanIn(inputs), rng));
        Self { weight, bias }
    }

    pub fn inputs(&self) -> usize {
        self.weight.cols
    }

    pub fn outputs(&self) -> usize {
        self.weight.rows
    }

    /// Apply to each of the `n` rows of `x` (row-major `n × in`).
    pub fn forward(&self, p: &[f64], x: &[f64]) -> Vec<f64> {
        let (i, o) = (self.inputs(), self.outputs());
        let w = self.weight.of(p);
        let n = x.len() / i;
        let mut y = vec![0.0; n * o];
        for r in 0..n {
            let xr = &x[r * i..(r + 1) * i];
            let yr = &mut y[r * o..(r + 1) * o];
            for (k, yk) in yr.iter_mut().enumerate() {
                *yk = dot(&w[k * i..(k + 1) * i], xr);
            }
            if let Some(b) = self.bias {
                for (yk, bk) in yr.iter_mut().zip(b.of(p)) {
                    *yk += bk;
                }
            }
        }
        y
    }

    /// Accumulate parameter gradients into `g`; return `dL/dx`.
    pub fn backward(&self, p: &[f64], x: &[f64], dy: &[f64], g: &mut [f64]) -> Vec<f64> {
        let (i, o) = (self.inputs(), self.outputs());
        let w = self.weight.of(p);
        let n = x.len() / i;
        let mut dx = vec![0.0; n * i];
        {
            let gw = self.weight.of_mut(g);
            for r in 0..n {
                let xr = &x[r * i..(r + 1) * i];
                let dxr = &mut dx[r * i..(r + 1) * i];
                for k in 0..o {
                    let d = dy[r * o + k];
                    if d == 0.0 {
                        continue;
                    }
                    let wk = &w[k * i..(k + 1) * i];
                    let gk = &mut gw[k * i..(k + 1) * i];
                    for j in 0..i {
                        gk[j] += d * xr[j];
                        dxr[j] += d * wk[j];
                    }
                }
            }
        }
        if let Some(b) = self.bias {
            let gb = b.of_mut(g);
            for r in 0..n {
                for k in 0..o {
                    gb[k] += dy[r * o + k];
                }
            }
        }
        dx
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.max(0.0)).collect()
}

/// Mask `dy` by the sign of the pre-activation.
pub(crate) fn relu_backward(pre: &[f64], dy: &[f64]) -> Vec<f64> {
    pre.iter().zip(dy).map(|(p, d)| if *p > 0.0 { *d } else { 0.0 }).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: vec![0.0; len], v: vec![0.0; len] }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.m, &self.v)
    }

    /// Bias-corrected adaptive-moment step.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len(), "optimizer state does not match parameters");
        assert_eq!(grads.len(), self.m.len(), "gradient does not match parameters");
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// `target ← (1 − τ)·target + τ·online`.
pub fn polyak_update(target: &mut [f64], online: &[f64], tau: f64) {
    assert_eq!(target.len(), online.len());
    if tau == 1.0 {
        target.copy_from_slice(online);
        return;
    }
    for (t, o) in target.iter_mut().zip(online) {
        *t += tau * (o - *t);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dense_matches_direct_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::default();
        let d = Dense::new(&mut store, "fc", 3, 2, true, &mut rng);
        let p = &store.values;
        let x = [0.5, -1.0, 2.0];
        let y = d.forward(p, &x);
        let w = d.weight.of(p);
        let b = d.bias.unwrap().of(p);
        for k in 0..2 {
            let expect = w[3 * k] * x[0] + w[3 * k + 1] * x[1] + w[3 * k + 2] * x[2] + b[k];
            assert_relative_eq!(y[k], expect, epsilon = 1e-15);
        }
        let bound = 1.0 / 3f64.sqrt();
        assert!(p.iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut p = vec![0.3, -0.2];
        let mut opt = Adam::new(2, 1e-3);
        opt.update(&mut p, &[0.0, 0.0]);
        assert_eq!(p, vec![0.3, -0.2]);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = vec![1.0, 1.0, 1.0];
        let mut opt = Adam::new(3, 0.01);
        opt.update(&mut p, &[2.5, -0.1, 40.0]);
        assert_relative_eq!(p[0], 0.99, epsilon = 1e-8);
        assert_relative_eq!(p[1], 1.01, epsilon = 1e-6);
        assert_relative_eq!(p[2], 0.99, epsilon = 1e-8);
    }

    #[test]
    fn adam_moments_stay_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = vec![0.0; 4];
        let mut opt = Adam::new(4, 1e-3);
        for _ in 0..10_000 {
            let g: Vec<f64> = (0..4).map(|_| rng.gen_range(-100.0..100.0)).collect();
            opt.update(&mut p, &g);
        }
        let (m, v) = opt.moments();
        assert!(m.iter().chain(v).chain(&p).all(|x| x.is_finite()));
    }

    #[test]
    fn polyak_examples() {
        let online = [1.0, 2.0, 3.0];
        let mut t = [0.0; 3];
        polyak_update(&mut t, &online, 1.0);
        assert_eq!(t, online);
        polyak_update(&mut t, &online, 0.3);
        assert_eq!(t, online);

        let mut t = [0.0];
        let tau = 0.1;
        for n in 1..=50 {
            polyak_update(&mut t, &[1.0], tau);
            assert_relative_eq!(t[0], 1.0 - (1.0 - tau).powi(n), epsilon = 1e-12);
        }
    }
}
