//! Small fully-connected tanh networks with hand-written backprop.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major, `outputs x inputs`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// Orthogonal weights scaled by `gain`, zero bias.
    pub fn orthogonal<R: Rng + ?Sized>(inputs: usize, outputs: usize, gain: f64, rng: &mut R) -> Self {
        let mut layer = Self::zeros(inputs, outputs);
        // Orthonormalize along the shorter dimension.
        let (rows, cols, transpose) = if outputs <= inputs {
            (outputs, inputs, false)
        } else {
            (inputs, outputs, true)
        };
        let mut m: Vec<Vec<f64>> = (0..rows)
            .map(|_| (0..cols).map(|_| StandardNormal.sample(rng)).collect())
            .collect();
        for i in 0..rows {
            for j in 0..i {
                let dot: f64 = m[i].iter().zip(&m[j]).map(|(a, b)| a * b).sum();
                let (head, tail) = m.split_at_mut(i);
                for (a, b) in tail[0].iter_mut().zip(&head[j]) {
                    *a -= dot * b;
                }
            }
            let norm = m[i].iter().map(|a| a * a).sum::<f64>().sqrt();
            for a in &mut m[i] {
                *a /= norm;
            }
        }
        for r in 0..rows {
            for c in 0..cols {
                let (o, i) = if transpose { (c, r) } else { (r, c) };
                layer.weights[o * inputs + i] = gain * m[r][c];
            }
        }
        layer
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.outputs {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            let z: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias[o];
            out.push(z);
        }
    }
}

/// Layer activations from one forward pass: input, hidden (post-tanh), output.
#[derive(Debug, Clone)]
pub struct MlpCache {
    pub activations: Vec<Vec<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("at least the input")
    }
}

/// Tanh between layers, linear output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    /// `sizes` = [input, hidden..., output].
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], hidden_gain: f64, output_gain: f64, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|k| {
                let gain = if k + 1 == n { output_gain } else { hidden_gain };
                Dense::orthogonal(sizes[k], sizes[k + 1], gain, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].inputs];
        s.extend(self.layers.iter().map(|l| l.outputs));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        let mut z = Vec::new();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            layer.apply(&a, &mut z);
            if k != last {
                z.iter_mut().for_each(|v| *v = v.tanh());
            }
            std::mem::swap(&mut a, &mut z);
        }
        a
    }

    pub fn forward_cached(&self, x: &[f64]) -> MlpCache {
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::with_capacity(layer.outputs);
            layer.apply(activations.last().expect("input"), &mut z);
            if k != last {
                z.iter_mut().for_each(|v| *v = v.tanh());
            }
            activations.push(z);
        }
        MlpCache { activations }
    }

    /// Accumulates d(loss)/d(params) into `grad` (flat layout, see [`Mlp::flat`])
    /// given d(loss)/d(output).
    pub fn backward(&self, cache: &MlpCache, d_output: &[f64], grad: &mut [f64]) {
        debug_assert_eq!(grad.len(), self.param_count());
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for l in &self.layers {
            offsets.push(off);
            off += l.param_count();
        }
        let mut delta = d_output.to_vec();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let input = &cache.activations[k];
            let base = offsets[k];
            let (gw, gb) = grad[base..base + layer.param_count()].split_at_mut(layer.weights.len());
            for o in 0..layer.outputs {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                let row = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
                for (g, x) in row.iter_mut().zip(input) {
                    *g += d * x;
                }
            }
            if k == 0 {
                break;
            }
            let mut prev = vec![0.0; layer.inputs];
            for o in 0..layer.outputs {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (p, w) in prev.iter_mut().zip(row) {
                    *p += d * w;
                }
            }
            // Input to layer k is tanh output of layer k-1.
            for (p, a) in prev.iter_mut().zip(input) {
                *p *= 1.0 - a * a;
            }
            delta = prev;
        }
    }

    /// Parameters as one vector: per layer, weights then bias.
    pub fn flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            v.extend_from_slice(&l.weights);
            v.extend_from_slice(&l.bias);
        }
        v
    }

    pub fn set_flat(&mut self, v: &[f64]) {
        assert_eq!(v.len(), self.param_count(), "flat parameter length mismatch");
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&v[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&v[off..off + nb]);
            off += nb;
        }
    }

    /// Rebuilds from layer sizes and a flat parameter vector.
    pub fn from_flat(sizes: &[usize], v: &[f64]) -> Option<Self> {
        if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) {
            return None;
        }
        let mut m = Self {
            layers: sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
        };
        if v.len() != m.param_count() {
            return None;
        }
        m.set_flat(v);
        Some(m)
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn orthogonal_rows_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let l = Dense::orthogonal(7, 5, 1.0, &mut rng);
        for a in 0..5 {
            for b in 0..5 {
                let dot: f64 = (0..7).map(|i| l.weights[a * 7 + i] * l.weights[b * 7 + i]).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-12);
            }
        }
        // Tall matrix: columns orthonormal.
        let l = Dense::orthogonal(3, 8, 2.0, &mut rng);
        for a in 0..3 {
            let norm: f64 = (0..8).map(|o| l.weights[o * 3 + a].powi(2)).sum();
            assert!((norm - 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn flat_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = Mlp::new(&[7, 16, 16, 1], 2f64.sqrt(), 1.0, &mut rng);
        let back = Mlp::from_flat(&m.sizes(), &m.flat()).unwrap();
        assert_eq!(back, m);
        assert!(Mlp::from_flat(&[7, 16, 1], &m.flat()).is_none());
    }

    #[test]
    fn cached_and_plain_forward_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = Mlp::new(&[4, 8, 2], 1.0, 1.0, &mut rng);
        let x = [0.1, -0.3, 0.7, 2.0];
        assert_eq!(m.forward(&x), m.forward_cached(&x).output());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = Mlp::new(&[3, 5, 4, 2], 1.3, 0.8, &mut rng);
        let x = [0.4, -1.1, 0.25];
        let w = [0.7, -1.9];
        let loss = |m: &Mlp| m.forward(&x).iter().zip(&w).map(|(o, w)| o * w).sum::<f64>();
        let mut grad = vec![0.0; m.param_count()];
        m.backward(&m.forward_cached(&x), &w, &mut grad);
        let base = m.flat();
        let h = 1e-6;
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] += h;
            let mut mp = m.clone();
            mp.set_flat(&p);
            p[i] -= 2.0 * h;
            let mut mm = m.clone();
            mm.set_flat(&p);
            let fd = (loss(&mp) - loss(&mm)) / (2.0 * h);
            assert!((fd - grad[i]).abs() <= 1e-6 * fd.abs().max(1e-3), "param {i}: {fd} vs {}", grad[i]);
        }
    }
}
