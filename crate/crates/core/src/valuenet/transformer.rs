//! Pre-norm Transformer encoder over a short window of states.
//!
//! Token matrices are row-major `T × width` slices throughout.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::head::Head;
use super::params::{dot, relu, relu_backward, Dense, Init, ParamStore, Slot};

const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    Mean,
    LastToken,
}

pub fn positional_encoding(position: usize, d: usize) -> Vec<f64> {
    (0..d)
        .map(|j| {
            let i = (j / 2) as f64;
            let angle = position as f64 / 10000f64.powf(2.0 * i / d as f64);
            if j % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}

/// `softmax(Q Kᵀ / √d_k) V` with `d_k` the column count of `Q`.
pub fn attention(q: &DMatrix<f64>, k: &DMatrix<f64>, v: &DMatrix<f64>) -> DMatrix<f64> {
    let scale = 1.0 / (q.ncols() as f64).sqrt();
    let mut s = q * k.transpose() * scale;
    for mut row in s.row_iter_mut() {
        let probs = softmax(&row.iter().copied().collect::<Vec<_>>());
        for (x, p) in row.iter_mut().zip(probs) {
            *x = p;
        }
    }
    s * v
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = e.iter().sum();
    e.into_iter().map(|v| v / sum).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Norm {
    gain: Slot,
    bias: Slot,
}

#[derive(Debug, Clone)]
struct NormTape {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

impl Norm {
    fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, d: usize, rng: &mut R) -> Self {
        Self {
            gain: store.add(&format!("{name}.gain"), 1, d, Init::Ones, rng),
            bias: store.add(&format!("{name}.bias"), 1, d, Init::Zeros, rng),
        }
    }

    fn forward(&self, p: &[f64], x: &[f64]) -> (Vec<f64>, NormTape) {
        let d = self.gain.cols;
        let (g, b) = (self.gain.of(p), self.bias.of(p));
        let n = x.len() / d;
        let mut y = vec![0.0; x.len()];
        let mut xhat = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; n];
        for r in 0..n {
            let row = &x[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + NORM_EPS).sqrt();
            inv_std[r] = inv;
            for j in 0..d {
                let h = (row[j] - mean) * inv;
                xhat[r * d + j] = h;
                y[r * d + j] = g[j] * h + b[j];
            }
        }
        (y, NormTape { xhat, inv_std })
    }

    fn backward(&self, p: &[f64], tape: &NormTape, dy: &[f64], grads: &mut [f64]) -> Vec<f64> {
        let d = self.gain.cols;
        let g = self.gain.of(p);
        let n = dy.len() / d;
        let mut dx = vec![0.0; dy.len()];
        for r in 0..n {
            let xh = &tape.xhat[r * d..(r + 1) * d];
            let dyr = &dy[r * d..(r + 1) * d];
            {
                let gg = self.gain.of_mut(grads);
                for j in 0..d {
                    gg[j] += dyr[j] * xh[j];
                }
            }
            {
                let gb = self.bias.of_mut(grads);
                for j in 0..d {
                    gb[j] += dyr[j];
                }
            }
            let dxh: Vec<f64> = (0..d).map(|j| dyr[j] * g[j]).collect();
            let sum: f64 = dxh.iter().sum();
            let sum_x: f64 = dxh.iter().zip(xh).map(|(a, b)| a * b).sum();
            let inv = tape.inv_std[r];
            for j in 0..d {
                dx[r * d + j] = inv / d as f64 * (d as f64 * dxh[j] - sum - xh[j] * sum_x);
            }
        }
        dx
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct EncoderLayer {
    norm1: Norm,
    query: Dense,
    key: Dense,
    value: Dense,
    output: Dense,
    norm2: Norm,
    ff1: Dense,
    ff2: Dense,
}

#[derive(Debug, Clone)]
struct LayerTape {
    norm1: NormTape,
    normed1: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// Attention weights, one `T × T` block per head.
    probs: Vec<Vec<f64>>,
    heads: Vec<f64>,
    norm2: NormTape,
    normed2: Vec<f64>,
    hidden_pre: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transformer {
    pub store: ParamStore,
    input_dim: usize,
    d_model: usize,
    heads: usize,
    window: usize,
    pooling: Pooling,
    embed: Dense,
    layers: Vec<EncoderLayer>,
    final_norm: Norm,
    head: Head,
    action_count: usize,
}

#[derive(Debug, Clone)]
pub struct TransformerTape {
    tokens: Vec<f64>,
    layers: Vec<LayerTape>,
    final_norm: NormTape,
    pooled: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformerShape {
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub window: usize,
    pub pooling: Pooling,
}

impl Default for TransformerShape {
    fn default() -> Self {
        Self { d_model: 64, heads: 4, layers: 2, window: 8, pooling: Pooling::LastToken }
    }
}

impl Transformer {
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        shape: &TransformerShape,
        action_count: usize,
        dueling: bool,
        rng: &mut R,
    ) -> Self {
        let d = shape.d_model;
        assert!(shape.heads > 0 && d.is_multiple_of(shape.heads), "d_model must be divisible by the head count");
        let mut store = ParamStore::default();
        let embed = Dense::new(&mut store, "embed", input_dim, d, false, rng);
        let layers = (0..shape.layers)
            .map(|l| EncoderLayer {
                norm1: Norm::new(&mut store, &format!("layer{l}.norm1"), d, rng),
                query: Dense::new(&mut store, &format!("layer{l}.query"), d, d, false, rng),
                key: Dense::new(&mut store, &format!("layer{l}.key"), d, d, false, rng),
                value: Dense::new(&mut store, &format!("layer{l}.value"), d, d, false, rng),
                output: Dense::new(&mut store, &format!("layer{l}.output"), d, d, false, rng),
                norm2: Norm::new(&mut store, &format!("layer{l}.norm2"), d, rng),
                ff1: Dense::new(&mut store, &format!("layer{l}.ff1"), d, 4 * d, true, rng),
                ff2: Dense::new(&mut store, &format!("layer{l}.ff2"), 4 * d, d, true, rng),
            })
            .collect();
        let final_norm = Norm::new(&mut store, "final_norm", d, rng);
        let head = Head::new(&mut store, d, action_count, dueling, rng);
        Self {
            store,
            input_dim,
            d_model: d,
            heads: shape.heads,
            window: shape.window,
            pooling: shape.pooling,
            embed,
            layers,
            final_norm,
            head,
            action_count,
        }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn action_count(&self) -> usize {
        self.action_count
    }

    /// `tokens` is the window flattened oldest first, `T × input_dim`.
    pub fn forward(&self, tokens: &[f64]) -> Vec<f64> {
        self.forward_tape(tokens).0
    }

    /// Attention weights of every layer and head, for inspection.
    pub fn attention_weights(&self, tokens: &[f64]) -> Vec<Vec<Vec<f64>>> {
        self.forward_tape(tokens).1.layers.into_iter().map(|l| l.probs).collect()
    }

    pub fn forward_tape(&self, tokens: &[f64]) -> (Vec<f64>, TransformerTape) {
        let p = &self.store.values;
        let d = self.d_model;
        let t = tokens.len() / self.input_dim;
        let mut h = self.embed.forward(p, tokens);
        for pos in 0..t {
            for (x, e) in h[pos * d..(pos + 1) * d].iter_mut().zip(positional_encoding(pos, d)) {
                *x += e;
            }
        }
        let mut layer_tapes = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (out, tape) = self.layer_forward(layer, p, h, t);
            h = out;
            layer_tapes.push(tape);
        }
        let (normed, norm_tape) = self.final_norm.forward(p, &h);
        let pooled = match self.pooling {
            Pooling::Mean => {
                let mut z = vec![0.0; d];
                for r in 0..t {
                    for j in 0..d {
                        z[j] += normed[r * d + j] / t as f64;
                    }
                }
                z
            }
            Pooling::LastToken => normed[(t - 1) * d..t * d].to_vec(),
        };
        let q = self.head.forward(p, &pooled);
        (q, TransformerTape { tokens: tokens.to_vec(), layers: layer_tapes, final_norm: norm_tape, pooled })
    }

    fn layer_forward(&self, layer: &EncoderLayer, p: &[f64], input: Vec<f64>, t: usize) -> (Vec<f64>, LayerTape) {
        let d = self.d_model;
        let dk = d / self.heads;
        let scale = 1.0 / (dk as f64).sqrt();
        let (normed1, norm1) = layer.norm1.forward(p, &input);
        let q = layer.query.forward(p, &normed1);
        let k = layer.key.forward(p, &normed1);
        let v = layer.value.forward(p, &normed1);
        let mut heads = vec![0.0; t * d];
        let mut probs = Vec::with_capacity(self.heads);
        for hd in 0..self.heads {
            let cols = hd * dk..(hd + 1) * dk;
            let mut a = vec![0.0; t * t];
            for i in 0..t {
                let scores: Vec<f64> =
                    (0..t).map(|j| dot(&q[i * d..][cols.clone()], &k[j * d..][cols.clone()]) * scale).collect();
                a[i * t..(i + 1) * t].copy_from_slice(&softmax(&scores));
                for j in 0..t {
                    let w = a[i * t + j];
                    for c in cols.clone() {
                        heads[i * d + c] += w * v[j * d + c];
                    }
                }
            }
            probs.push(a);
        }
        let attended = layer.output.forward(p, &heads);
        let mid: Vec<f64> = input.iter().zip(&attended).map(|(a, b)| a + b).collect();
        let (normed2, norm2) = layer.norm2.forward(p, &mid);
        let hidden_pre = layer.ff1.forward(p, &normed2);
        let ff = layer.ff2.forward(p, &relu(&hidden_pre));
        let out: Vec<f64> = mid.iter().zip(&ff).map(|(a, b)| a + b).collect();
        let tape = LayerTape { norm1, normed1, q, k, v, probs, heads, norm2, normed2, hidden_pre };
        (out, tape)
    }

    pub fn backward(&self, tape: &TransformerTape, dq: &[f64], g: &mut [f64]) {
        let p = &self.store.values;
        let d = self.d_model;
        let t = tape.tokens.len() / self.input_dim;
        let dz = self.head.backward(p, &tape.pooled, dq, g);
        let mut dnormed = vec![0.0; t * d];
        match self.pooling {
            Pooling::Mean => {
                for r in 0..t {
                    for j in 0..d {
                        dnormed[r * d + j] = dz[j] / t as f64;
                    }
                }
            }
            Pooling::LastToken => dnormed[(t - 1) * d..].copy_from_slice(&dz),
        }
        let mut dh = self.final_norm.backward(p, &tape.final_norm, &dnormed, g);
        for (layer, lt) in self.layers.iter().zip(&tape.layers).rev() {
            dh = self.layer_backward(layer, lt, p, &dh, t, g);
        }
        self.embed.backward(p, &tape.tokens, &dh, g);
    }

    fn layer_backward(
        &self,
        layer: &EncoderLayer,
        lt: &LayerTape,
        p: &[f64],
        dout: &[f64],
        t: usize,
        g: &mut [f64],
    ) -> Vec<f64> {
        let d = self.d_model;
        let dk = d / self.heads;
        let scale = 1.0 / (dk as f64).sqrt();

        // Feedforward branch.
        let dhidden = layer.ff2.backward(p, &relu(&lt.hidden_pre), dout, g);
        let dpre = relu_backward(&lt.hidden_pre, &dhidden);
        let dnormed2 = layer.ff1.backward(p, &lt.normed2, &dpre, g);
        let dn2 = layer.norm2.backward(p, &lt.norm2, &dnormed2, g);
        let dmid: Vec<f64> = dout.iter().zip(&dn2).map(|(a, b)| a + b).collect();

        // Attention branch.
        let dheads = layer.output.backward(p, &lt.heads, &dmid, g);
        let mut dq = vec![0.0; t * d];
        let mut dk_ = vec![0.0; t * d];
        let mut dv = vec![0.0; t * d];
        for hd in 0..self.heads {
            let cols = hd * dk..(hd + 1) * dk;
            let a = &lt.probs[hd];
            for i in 0..t {
                // dA_ij = dO_i · V_j
                let da: Vec<f64> =
                    (0..t).map(|j| dot(&dheads[i * d..][cols.clone()], &lt.v[j * d..][cols.clone()])).collect();
                let row = &a[i * t..(i + 1) * t];
                let inner: f64 = row.iter().zip(&da).map(|(x, y)| x * y).sum();
                for j in 0..t {
                    let ds = row[j] * (da[j] - inner) * scale;
                    for c in cols.clone() {
                        dv[j * d + c] += row[j] * dheads[i * d + c];
                        dq[i * d + c] += ds * lt.k[j * d + c];
                        dk_[j * d + c] += ds * lt.q[i * d + c];
                    }
                }
            }
        }
        let mut dnormed1 = layer.query.backward(p, &lt.normed1, &dq, g);
        for (x, y) in dnormed1.iter_mut().zip(layer.key.backward(p, &lt.normed1, &dk_, g)) {
            *x += y;
        }
        for (x, y) in dnormed1.iter_mut().zip(layer.value.backward(p, &lt.normed1, &dv, g)) {
            *x += y;
        }
        let dn1 = layer.norm1.backward(p, &lt.norm1, &dnormed1, g);
        dmid.iter().zip(&dn1).map(|(a, b)| a + b).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn positional_encoding_examples() {
        assert_eq!(positional_encoding(0, 6), vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        assert_relative_eq!(positional_encoding(1, 8)[0], 0.8414709848078965, epsilon = 1e-15);
        assert_relative_eq!(positional_encoding(1, 8)[1], 1f64.cos(), epsilon = 1e-15);
        assert_relative_eq!(positional_encoding(3, 8)[2], (3.0 / 10f64).sin(), epsilon = 1e-15);
        for pos in 0..50 {
            assert!(positional_encoding(pos, 16).iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn attention_examples() {
        let q = DMatrix::from_row_slice(1, 2, &[0.3, -0.7]);
        assert_eq!(attention(&q, &q, &q), q);

        let q = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let kv = DMatrix::identity(2, 2);
        let out = attention(&q, &kv, &kv);
        let w0 = 1.0 / (1.0 + (-1.0 / 2f64.sqrt()).exp());
        assert_relative_eq!(out[(0, 0)], w0, epsilon = 1e-12);
        assert_relative_eq!(out[(0, 1)], 1.0 - w0, epsilon = 1e-12);
        assert_relative_eq!(out[(0, 0)], 0.6698, epsilon = 1e-4);
    }

    #[test]
    fn softmax_on_simplex() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let x: Vec<f64> = (0..7).map(|_| rng.gen_range(-50.0..50.0)).collect();
            let s = softmax(&x);
            assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(s.iter().all(|v| *v >= 0.0));
        }
    }

    fn tiny(pooling: Pooling, dueling: bool, seed: u64) -> Transformer {
        let shape = TransformerShape { d_model: 8, heads: 2, layers: 1, window: 3, pooling };
        Transformer::new(10, &shape, 4, dueling, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn head_attention_agrees_with_matrix_form() {
        let net = tiny(Pooling::Mean, false, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let tokens: Vec<f64> = (0..30).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (_, tape) = net.forward_tape(&tokens);
        let lt = &tape.layers[0];
        for hd in 0..2 {
            let pick = |m: &[f64]| DMatrix::from_fn(3, 4, |r, c| m[r * 8 + hd * 4 + c]);
            let expect = attention(&pick(&lt.q), &pick(&lt.k), &pick(&lt.v));
            assert!((pick(&lt.heads) - expect).amax() < 1e-12);
        }
    }

    #[test]
    fn identical_tokens_attend_by_position_only() {
        let net = tiny(Pooling::Mean, false, 7);
        let state: Vec<f64> = (0..10).map(|i| 0.1 * i as f64).collect();
        let tokens: Vec<f64> = state.iter().cycle().take(30).cloned().collect();
        let weights = net.attention_weights(&tokens);
        // Without positional encoding all rows would be exactly uniform;
        // with it they stay close to uniform and still sum to one.
        for head in &weights[0] {
            for row in head.chunks(3) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(row.iter().all(|w| (w - 1.0 / 3.0).abs() < 0.3));
            }
        }
    }

    #[test]
    fn output_shape_and_dueling_identity() {
        let net = tiny(Pooling::LastToken, true, 8);
        let q = net.forward(&[0.2; 30]);
        assert_eq!(q.len(), 4);
        let (_, tape) = net.forward_tape(&[0.2; 30]);
        if let Head::Dueling { value, .. } = net.head {
            let v = value.forward(&net.store.values, &tape.pooled)[0];
            let gap: f64 = q.iter().map(|x| x - v).sum::<f64>() / 4.0;
            assert!(gap.abs() < 1e-10);
        } else {
            panic!("expected dueling head");
        }
    }
}
