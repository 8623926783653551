//! Small multilayer perceptrons with exact reverse-mode gradients, Adam and
//! soft target updates. Hidden layers use ReLU; the output layer is linear
//! or a logistic sigmoid.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::{gemm, gemm_acc};
use crate::{Error, Result};

pub const NET_MAGIC: &[u8; 4] = b"MLP1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Identity,
    /// Logistic sigmoid, bounded to `(0, 1)`.
    Sigmoid,
}

/// Fully-connected layer; `weights` is `outputs x inputs`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    inputs: usize,
    outputs: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Dense {
    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradNet {
    layers: Vec<Dense>,
    output: OutputActivation,
}

/// Activations of every layer for one batch, kept for [`GradNet::backward`].
#[derive(Clone, Debug)]
pub struct ForwardCache {
    batch: usize,
    /// `acts[0]` is the input, `acts[l + 1]` the output of layer `l`.
    acts: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("cache holds the input")
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

/// Parameter gradients laid out like the network's layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &GradNet) -> Self {
        Self {
            weights: net
                .layers
                .iter()
                .map(|l| vec![0.0; l.weights.len()])
                .collect(),
            bias: net.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.weights
            .iter()
            .chain(&self.bias)
            .flatten()
            .all(|&g| g == 0.0)
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl GradNet {
    /// Layer sizes `[input, hidden..., output]`, weights and biases uniform in
    /// `±1/sqrt(fan_in)`.
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        output: OutputActivation,
        rng: &mut R,
    ) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::param(format!("invalid layer sizes {sizes:?}")));
        }
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (inputs, outputs) = (w[0], w[1]);
                let bound = 1.0 / (inputs as f64).sqrt();
                let mut draw = |n: usize| {
                    (0..n)
                        .map(|_| rng.random_range(-bound..=bound))
                        .collect::<Vec<f64>>()
                };
                let weights = draw(inputs * outputs);
                let bias = draw(outputs);
                Dense {
                    inputs,
                    outputs,
                    weights,
                    bias,
                }
            })
            .collect();
        Ok(Self { layers, output })
    }

    /// Network with every parameter zero.
    pub fn zeros(sizes: &[usize], output: OutputActivation) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::param(format!("invalid layer sizes {sizes:?}")));
        }
        let layers = sizes
            .windows(2)
            .map(|w| Dense {
                inputs: w[0],
                outputs: w[1],
                weights: vec![0.0; w[0] * w[1]],
                bias: vec![0.0; w[1]],
            })
            .collect();
        Ok(Self { layers, output })
    }

    /// Multiplies the last layer's parameters by `factor`.
    pub fn scale_output_layer(&mut self, factor: f64) {
        let last = self.layers.last_mut().expect("at least one layer");
        last.weights
            .iter_mut()
            .chain(last.bias.iter_mut())
            .for_each(|v| *v *= factor);
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].inputs];
        s.extend(self.layers.iter().map(|l| l.outputs));
        s
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_size(&self) -> usize {
        self.layers.last().map(|l| l.outputs).unwrap_or(0)
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn same_architecture(&self, other: &GradNet) -> bool {
        self.output == other.output && self.sizes() == other.sizes()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    /// Forward pass over `batch` row-major inputs, keeping activations.
    pub fn forward_cached(&self, inputs: &[f64], batch: usize) -> Result<ForwardCache> {
        if batch == 0 || inputs.len() != batch * self.input_size() {
            return Err(Error::shape(format!(
                "{} inputs for a batch of {batch} x {}",
                inputs.len(),
                self.input_size()
            )));
        }
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(inputs.to_vec());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let x = acts.last().expect("nonempty");
            let mut z = vec![0.0; batch * layer.outputs];
            for row in z.chunks_exact_mut(layer.outputs) {
                row.copy_from_slice(&layer.bias);
            }
            gemm_acc(
                batch,
                layer.inputs,
                layer.outputs,
                x,
                layer.inputs as isize,
                1,
                &layer.weights,
                1,
                layer.inputs as isize,
                1.0,
                &mut z,
            );
            if i < last {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            } else if self.output == OutputActivation::Sigmoid {
                z.iter_mut().for_each(|v| *v = sigmoid(*v));
            }
            acts.push(z);
        }
        Ok(ForwardCache { batch, acts })
    }

    pub fn forward_batch(&self, inputs: &[f64], batch: usize) -> Result<Vec<f64>> {
        Ok(self
            .forward_cached(inputs, batch)?
            .acts
            .pop()
            .expect("nonempty"))
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.forward_batch(input, 1)
    }

    /// Reverse pass: given `d loss / d output` for every batch row, returns the
    /// parameter gradients summed over the batch and `d loss / d input` per row.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_output: &[f64],
    ) -> Result<(Gradients, Vec<f64>)> {
        let batch = cache.batch;
        if cache.acts.len() != self.layers.len() + 1
            || cache.acts[0].len() != batch * self.input_size()
        {
            return Err(Error::shape(
                "forward cache does not belong to this network",
            ));
        }
        if grad_output.len() != batch * self.output_size() {
            return Err(Error::shape(format!(
                "{} output gradients for a batch of {batch} x {}",
                grad_output.len(),
                self.output_size()
            )));
        }
        let mut grads = Gradients::zeros_like(self);
        let last = self.layers.len() - 1;
        // gradient w.r.t. the pre-activation of the current layer
        let mut delta: Vec<f64> = match self.output {
            OutputActivation::Identity => grad_output.to_vec(),
            OutputActivation::Sigmoid => grad_output
                .iter()
                .zip(&cache.acts[last + 1])
                .map(|(g, y)| g * y * (1.0 - y))
                .collect(),
        };
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let x = &cache.acts[i];
            // dW = delta^T x
            gemm(
                layer.outputs,
                batch,
                layer.inputs,
                &delta,
                1,
                layer.outputs as isize,
                x,
                layer.inputs as isize,
                1,
                &mut grads.weights[i],
            );
            for row in delta.chunks_exact(layer.outputs) {
                for (g, d) in grads.bias[i].iter_mut().zip(row) {
                    *g += d;
                }
            }
            // dX = delta W
            let mut dx = vec![0.0; batch * layer.inputs];
            gemm(
                batch,
                layer.outputs,
                layer.inputs,
                &delta,
                layer.outputs as isize,
                1,
                &layer.weights,
                layer.inputs as isize,
                1,
                &mut dx,
            );
            if i > 0 {
                // previous layer is a ReLU
                for (g, &a) in dx.iter_mut().zip(x) {
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            delta = dx;
        }
        Ok((grads, delta))
    }

    /// Writes the architecture and parameters (little-endian).
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(NET_MAGIC)?;
        let sizes = self.sizes();
        w.write_all(&(sizes.len() as u32).to_le_bytes())?;
        for s in sizes {
            w.write_all(&(s as u32).to_le_bytes())?;
        }
        w.write_all(&[match self.output {
            OutputActivation::Identity => 0u8,
            OutputActivation::Sigmoid => 1u8,
        }])?;
        for layer in &self.layers {
            for v in layer.weights.iter().chain(&layer.bias) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != NET_MAGIC {
            return Err(Error::format("network", "bad magic"));
        }
        let mut u32_buf = [0u8; 4];
        r.read_exact(&mut u32_buf)?;
        let count = u32::from_le_bytes(u32_buf) as usize;
        if !(2..=64).contains(&count) {
            return Err(Error::format("network", format!("{count} layer sizes")));
        }
        let mut sizes = Vec::with_capacity(count);
        for _ in 0..count {
            r.read_exact(&mut u32_buf)?;
            let s = u32::from_le_bytes(u32_buf) as usize;
            if s == 0 || s > 1 << 16 {
                return Err(Error::format("network", format!("layer size {s}")));
            }
            sizes.push(s);
        }
        let mut act = [0u8; 1];
        r.read_exact(&mut act)?;
        let output = match act[0] {
            0 => OutputActivation::Identity,
            1 => OutputActivation::Sigmoid,
            a => {
                return Err(Error::format(
                    "network",
                    format!("unknown output activation {a}"),
                ))
            }
        };
        let mut net = Self::zeros(&sizes, output)?;
        let mut f64_buf = [0u8; 8];
        for layer in &mut net.layers {
            for v in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                r.read_exact(&mut f64_buf)?;
                *v = f64::from_le_bytes(f64_buf);
            }
        }
        Ok(net)
    }
}

/// `target += delta (source - target)` for every parameter.
pub fn soft_update(target: &mut GradNet, source: &GradNet, delta: f64) -> Result<()> {
    if !target.same_architecture(source) {
        return Err(Error::shape("soft update between different architectures"));
    }
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::param(format!(
            "soft update step {delta} outside [0, 1]"
        )));
    }
    for (t, s) in target.layers.iter_mut().zip(&source.layers) {
        for (tv, sv) in t
            .weights
            .iter_mut()
            .chain(t.bias.iter_mut())
            .zip(s.weights.iter().chain(&s.bias))
        {
            *tv = if delta == 1.0 {
                *sv
            } else {
                *tv + delta * (sv - *tv)
            };
        }
    }
    Ok(())
}

/// Adam with the usual constants `beta1 = 0.9`, `beta2 = 0.999`, `eps = 1e-8`.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: Gradients,
    v: Gradients,
}

impl Adam {
    pub fn new(net: &GradNet, lr: f64) -> Result<Self> {
        if !(lr > 0.0) {
            return Err(Error::param(format!("learning rate {lr} must be positive")));
        }
        Ok(Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Gradients::zeros_like(net),
            v: Gradients::zeros_like(net),
        })
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One descent step on `net` along `grads`.
    pub fn step(&mut self, net: &mut GradNet, grads: &Gradients) -> Result<()> {
        if grads.weights.len() != net.layers.len()
            || grads
                .weights
                .iter()
                .zip(&grads.bias)
                .zip(&net.layers)
                .any(|((w, b), l)| w.len() != l.weights.len() || b.len() != l.bias.len())
            || self.m.weights.len() != net.layers.len()
        {
            return Err(Error::shape("gradients do not match the network"));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (i, layer) in net.layers.iter_mut().enumerate() {
            let params = layer.weights.iter_mut().chain(layer.bias.iter_mut());
            let g = grads.weights[i].iter().chain(&grads.bias[i]);
            let m = self.m.weights[i]
                .iter_mut()
                .chain(self.m.bias[i].iter_mut());
            let v = self.v.weights[i]
                .iter_mut()
                .chain(self.v.bias[i].iter_mut());
            for (((p, &g), m), v) in params.zip(g).zip(m).zip(v) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
