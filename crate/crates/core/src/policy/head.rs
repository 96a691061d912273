use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::features::{FrustumFeatures, FEATURE_DIM};
use crate::error::{invalid, Error, Result};
use crate::primitives::{PredictionVector, PREDICTION_DIM};

pub const HEAD_MAGIC: &[u8; 8] = b"PTHEAD01";

/// Dense layer, weights row-major `outputs x inputs`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs, weights: vec![0.0; inputs * outputs], bias: vec![0.0; outputs] }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.outputs {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            let s: f64 = row.iter().zip(x).map(|(w, xi)| *w as f64 * xi).sum();
            out.push(s + self.bias[o] as f64);
        }
    }
}

/// Fully connected map applied with the same parameters to every grid cell.
/// Hidden layers use tanh, the output is linear.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyHead {
    layers: Vec<Layer>,
}

/// Parameter gradient with the head's layout.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadGradient {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

impl HeadGradient {
    pub fn zeros_like(head: &PolicyHead) -> Self {
        Self {
            weights: head.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            bias: head.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    pub fn add(&mut self, other: &HeadGradient) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights).chain(self.bias.iter_mut().zip(&other.bias)) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.weights.iter_mut().chain(self.bias.iter_mut()).flatten().for_each(|x| *x *= k);
    }

    pub fn flat(&self) -> Vec<f64> {
        self.weights.iter().zip(&self.bias).flat_map(|(w, b)| w.iter().chain(b).copied()).collect()
    }

    pub fn norm(&self) -> f64 {
        self.flat().iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

impl PolicyHead {
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(invalid(format!("head sizes {sizes:?} need at least two positive entries")));
        }
        Ok(Self { layers: sizes.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect() })
    }

    /// Glorot-normal hidden layers; the output layer starts at `output_scale`
    /// times that so initial predictions stay near the anchors.
    pub fn random(sizes: &[usize], output_scale: f64, rng: &mut impl Rng) -> Result<Self> {
        let mut head = Self::zeros(sizes)?;
        let last = head.layers.len() - 1;
        for (i, layer) in head.layers.iter_mut().enumerate() {
            let std = (2.0 / (layer.inputs + layer.outputs) as f64).sqrt() * if i == last { output_scale } else { 1.0 };
            let dist = Normal::new(0.0, std).map_err(|e| invalid(e.to_string()))?;
            layer.weights.iter_mut().for_each(|w| *w = dist.sample(rng) as f32);
        }
        Ok(head)
    }

    /// The default 20 -> 64 -> 64 -> 14 head.
    pub fn default_sizes() -> Vec<usize> {
        vec![FEATURE_DIM, 64, 64, PREDICTION_DIM]
    }

    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].inputs).chain(self.layers.iter().map(|l| l.outputs)).collect()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Activations of every layer, input first, output last.
    fn trace(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = vec![x.to_vec()];
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::with_capacity(layer.outputs);
            layer.apply(&acts[i], &mut out);
            if i != last {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(out);
        }
        acts
    }

    pub fn forward_cell(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(invalid(format!("feature length {} does not match head input {}", x.len(), self.input_dim())));
        }
        Ok(self.trace(x).pop().expect("at least one layer"))
    }

    pub fn forward(&self, features: &FrustumFeatures) -> Result<Vec<PredictionVector>> {
        if self.output_dim() != PREDICTION_DIM {
            return Err(invalid(format!("head output {} is not {PREDICTION_DIM}", self.output_dim())));
        }
        features.cells.iter().map(|f| Ok(PredictionVector::from_slice(&self.forward_cell(f)?))).collect()
    }

    /// Accumulates `dL/dθ` for one cell given `dL/dy`.
    pub fn backward_cell(&self, x: &[f64], dy: &[f64], grad: &mut HeadGradient) -> Result<()> {
        if x.len() != self.input_dim() || dy.len() != self.output_dim() {
            return Err(invalid("backward dimensions do not match head"));
        }
        let acts = self.trace(x);
        let mut delta = dy.to_vec();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let input = &acts[i];
            for o in 0..layer.outputs {
                grad.bias[i][o] += delta[o];
                let row = &mut grad.weights[i][o * layer.inputs..(o + 1) * layer.inputs];
                row.iter_mut().zip(input).for_each(|(g, xi)| *g += delta[o] * xi);
            }
            if i == 0 {
                break;
            }
            // back through the weights and the tanh of the previous layer
            let mut prev = vec![0.0; layer.inputs];
            for o in 0..layer.outputs {
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                prev.iter_mut().zip(row).for_each(|(p, w)| *p += delta[o] * *w as f64);
            }
            prev.iter_mut().zip(input).for_each(|(p, a)| *p *= 1.0 - a * a);
            delta = prev;
        }
        Ok(())
    }

    /// Flattened parameters in layer order, weights then bias per layer.
    pub fn params(&self) -> Vec<f32> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias).copied()).collect()
    }

    pub fn set_params(&mut self, params: &[f32]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(invalid(format!("{} parameters for a head with {}", params.len(), self.num_params())));
        }
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            l.weights.iter_mut().chain(l.bias.iter_mut()).for_each(|p| *p = it.next().expect("length checked"));
        }
        Ok(())
    }

    /// Binary layout: magic, layer-size count (u32), sizes (u32 each), then
    /// per layer the row-major weights and the bias as f32, little-endian.
    pub fn write_binary(&self, mut w: impl Write) -> Result<()> {
        w.write_all(HEAD_MAGIC)?;
        let sizes = self.sizes();
        w.write_all(&(sizes.len() as u32).to_le_bytes())?;
        for s in sizes {
            w.write_all(&(s as u32).to_le_bytes())?;
        }
        for p in self.params() {
            w.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != HEAD_MAGIC {
            return Err(Error::Format("not a policy head file".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let n = u32::from_le_bytes(b4) as usize;
        if !(2..=64).contains(&n) {
            return Err(Error::Format(format!("implausible layer count {n}")));
        }
        let mut sizes = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut b4)?;
            sizes.push(u32::from_le_bytes(b4) as usize);
        }
        let mut head = Self::zeros(&sizes).map_err(|e| Error::Format(e.to_string()))?;
        let mut params = Vec::with_capacity(head.num_params());
        for _ in 0..head.num_params() {
            r.read_exact(&mut b4)?;
            params.push(f32::from_le_bytes(b4));
        }
        head.set_params(&params)?;
        Ok(head)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_binary(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_binary(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Momentum,
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub momentum: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { kind: OptimizerKind::Momentum, learning_rate: 1e-4, momentum: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Single-writer parameter update.
#[derive(Clone, Debug)]
pub struct Optimizer {
    pub config: OptimizerConfig,
    first: Vec<f64>,
    second: Vec<f64>,
    steps: u64,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        if !(config.learning_rate > 0.0) || !(0.0..1.0).contains(&config.momentum) || !(0.0..1.0).contains(&config.beta2) {
            return Err(invalid("optimizer hyper-parameters out of range"));
        }
        Ok(Self { config, first: Vec::new(), second: Vec::new(), steps: 0 })
    }

    pub fn step(&mut self, head: &mut PolicyHead, grad: &HeadGradient) -> Result<()> {
        let g = grad.flat();
        let mut p = head.params();
        if g.len() != p.len() {
            return Err(invalid("gradient does not match head"));
        }
        if self.first.len() != g.len() {
            self.first = vec![0.0; g.len()];
            self.second = vec![0.0; g.len()];
        }
        self.steps += 1;
        let c = self.config;
        let lr = c.learning_rate;
        match c.kind {
            OptimizerKind::Sgd => p.iter_mut().zip(&g).for_each(|(p, g)| *p = (*p as f64 - lr * g) as f32),
            OptimizerKind::Momentum => {
                for ((p, g), m) in p.iter_mut().zip(&g).zip(&mut self.first) {
                    *m = c.momentum * *m + g;
                    *p = (*p as f64 - lr * *m) as f32;
                }
            }
            OptimizerKind::Adam => {
                let b1 = c.momentum;
                let bc1 = 1.0 - b1.powi(self.steps as i32);
                let bc2 = 1.0 - c.beta2.powi(self.steps as i32);
                for i in 0..p.len() {
                    self.first[i] = b1 * self.first[i] + (1.0 - b1) * g[i];
                    self.second[i] = c.beta2 * self.second[i] + (1.0 - c.beta2) * g[i] * g[i];
                    let mhat = self.first[i] / bc1;
                    let vhat = self.second[i] / bc2;
                    p[i] = (p[i] as f64 - lr * mhat / (vhat.sqrt() + c.epsilon)) as f32;
                }
            }
        }
        head.set_params(&p)
    }
}
