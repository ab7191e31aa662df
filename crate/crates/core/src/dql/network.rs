//! Fully connected Q-network with rectifier hidden layers and a linear head,
//! plus the Adam optimiser that trains it.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs x inputs`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.weights.chunks_exact(self.inputs).zip(&self.bias).map(|(row, b)| {
            b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
        }));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QNetwork {
    layers: Vec<Dense>,
}

/// Per-layer activations from one forward pass, input first.
pub struct Trace {
    acts: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("trace has an output")
    }
}

impl QNetwork {
    /// He-style uniform initialisation, zero biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        let mut net = Self::zeros(sizes);
        for layer in &mut net.layers {
            let limit = (6.0 / layer.inputs as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.random_range(-limit..limit);
            }
        }
        net
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "network needs an input and an output size");
        Self {
            layers: sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
        }
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Contract("network without layers".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].outputs != pair[1].inputs {
                return Err(Error::Contract("layer sizes do not chain".into()));
            }
        }
        for l in &layers {
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(Error::Contract("layer parameter shape mismatch".into()));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(|l| l.outputs));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").outputs
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            layer.apply(&cur, &mut next);
            if i < last {
                next.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    pub fn trace(&self, x: &[f64]) -> Result<Trace> {
        self.check_input(x)?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::with_capacity(layer.outputs);
            layer.apply(acts.last().expect("input pushed"), &mut out);
            if i < last {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(out);
        }
        Ok(Trace { acts })
    }

    /// Accumulates d(loss)/d(params) into `grads` given d(loss)/d(output).
    pub fn backward(&self, trace: &Trace, grad_out: &[f64], grads: &mut Gradients) {
        let mut delta = grad_out.to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            if i < last {
                // Rectifier derivative from the post-activation value.
                for (d, a) in delta.iter_mut().zip(&trace.acts[i + 1]) {
                    if *a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let input = &trace.acts[i];
            let g = &mut grads.layers[i];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                g.bias[o] += d;
                let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (w, x) in row.iter_mut().zip(input) {
                    *w += d * x;
                }
            }
            if i > 0 {
                let mut prev = vec![0.0; layer.inputs];
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for (p, w) in prev.iter_mut().zip(row) {
                        *p += d * w;
                    }
                }
                delta = prev;
            }
        }
    }

    pub fn params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Contract(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let mut it = flat.iter().copied();
        for l in &mut self.layers {
            for w in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *w = it.next().expect("length checked");
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    fn slices_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Contract(format!(
                "state dimension {} does not match network input {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }
}

/// Gradient buffer shaped like a network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    layers: Vec<Dense>,
}

impl Gradients {
    pub fn zeros_like(net: &QNetwork) -> Self {
        Self {
            layers: net.layers.iter().map(|l| Dense::zeros(l.inputs, l.outputs)).collect(),
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn scale(&mut self, k: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().chain(l.bias.iter_mut()).for_each(|v| *v *= k);
        }
    }

    fn slices(&self) -> impl Iterator<Item = &[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub steps: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(net: &QNetwork, learning_rate: f64) -> Self {
        let shapes: Vec<Vec<f64>> = net
            .layers
            .iter()
            .flat_map(|l| [vec![0.0; l.weights.len()], vec![0.0; l.bias.len()]])
            .collect();
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            steps: 0,
            m: shapes.clone(),
            v: shapes,
        }
    }

    pub fn step(&mut self, net: &mut QNetwork, grads: &Gradients) {
        self.steps += 1;
        let t = self.steps as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.epsilon);
        for (((p, g), m), v) in net
            .slices_mut()
            .zip(grads.slices())
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn zero_network_outputs_zero() {
        let net = QNetwork::zeros(&[22, 128, 64, 6]);
        assert_eq!(net.forward(&[0.3; 22]).unwrap(), vec![0.0; 6]);
        assert_eq!(net.num_params(), 22 * 128 + 128 + 128 * 64 + 64 + 64 * 6 + 6);
    }

    #[test]
    fn hand_evaluated_toy_network() {
        // 2 -> 2 -> 2 -> 1 with hand-picked weights.
        let net = QNetwork::from_layers(vec![
            Dense { inputs: 2, outputs: 2, weights: vec![1.0, 0.0, 0.0, -1.0], bias: vec![0.5, 0.5] },
            Dense { inputs: 2, outputs: 2, weights: vec![2.0, 1.0, -1.0, 1.0], bias: vec![0.0, 0.0] },
            Dense { inputs: 2, outputs: 1, weights: vec![1.0, 3.0], bias: vec![-1.0] },
        ])
        .unwrap();
        // x = (1, 2): h1 = relu(1.5, -1.5) = (1.5, 0); h2 = relu(3.0, -1.5) = (3, 0); y = 3 - 1 = 2
        assert_eq!(net.forward(&[1.0, 2.0]).unwrap(), vec![2.0]);
        // x = (-1, -2): h1 = relu(-0.5, 2.5) = (0, 2.5); h2 = relu(2.5, 2.5); y = 2.5 + 7.5 - 1 = 9
        assert_eq!(net.forward(&[-1.0, -2.0]).unwrap(), vec![9.0]);
    }

    #[test]
    fn forward_is_pure_and_checks_dimension() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = QNetwork::new(&[22, 128, 64, 6], &mut rng);
        let x: Vec<f64> = (0..22).map(|i| i as f64 / 22.0).collect();
        assert_eq!(net.forward(&x).unwrap(), net.forward(&x).unwrap());
        assert_eq!(net.trace(&x).unwrap().output(), net.forward(&x).unwrap().as_slice());
        assert!(matches!(net.forward(&x[..21]), Err(Error::Contract(_))));
    }

    #[test]
    fn params_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = QNetwork::new(&[4, 3, 2, 6], &mut rng);
        let mut other = QNetwork::zeros(&[4, 3, 2, 6]);
        other.set_params(&net.params()).unwrap();
        assert_eq!(other, net);
        assert!(other.set_params(&[1.0]).is_err());
    }

    #[test]
    fn adam_ignores_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut net = QNetwork::new(&[4, 3, 6], &mut rng);
        let before = net.clone();
        let mut adam = Adam::new(&net, 1e-3);
        let zero = Gradients::zeros_like(&net);
        adam.step(&mut net, &zero);
        assert_eq!(net, before);
    }
}
