//! Tabular and small-MLP function approximators over a flat parameter
//! vector, with hand-written reverse-mode gradients.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TrainerError;
use crate::fusion::ActionDistribution;
use crate::gridworld::Observation;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Architecture {
    /// One row of outputs per discrete state.
    Tabular { states: usize },
    /// `layers[0]` is the input width, the rest are tanh hidden widths.
    Mlp { layers: Vec<usize> },
}

impl Architecture {
    pub fn mlp(input: usize, hidden: &[usize]) -> Self {
        let mut layers = vec![input];
        layers.extend_from_slice(hidden);
        Architecture::Mlp { layers }
    }

    pub fn param_count(&self, outputs: usize) -> usize {
        match self {
            Architecture::Tabular { states } => states * outputs,
            Architecture::Mlp { layers } => {
                let mut sizes = layers.clone();
                sizes.push(outputs);
                sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
            }
        }
    }

    pub fn check(&self, obs: &Observation) -> Result<(), TrainerError> {
        match self {
            Architecture::Tabular { states } if obs.index >= *states => {
                Err(TrainerError::EncodingMismatch(format!(
                    "state index {} outside table of {states}",
                    obs.index
                )))
            }
            Architecture::Mlp { layers } if obs.features.len() != layers[0] => {
                Err(TrainerError::EncodingMismatch(format!(
                    "feature width {} but network expects {}",
                    obs.features.len(),
                    layers[0]
                )))
            }
            _ => Ok(()),
        }
    }
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    /// Input to each layer (MLP) and the final output.
    acts: Vec<Vec<f64>>,
    index: usize,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub arch: Architecture,
    pub outputs: usize,
    pub params: Vec<f64>,
}

impl Model {
    pub fn zeros(arch: Architecture, outputs: usize) -> Self {
        let n = arch.param_count(outputs);
        Self {
            arch,
            outputs,
            params: vec![0.0; n],
        }
    }

    /// Tables start at zero; MLP layers use uniform fan-in scaling with the
    /// output layer shrunk by `output_scale`.
    pub fn init<R: Rng + ?Sized>(arch: Architecture, outputs: usize, output_scale: f64, rng: &mut R) -> Self {
        let mut model = Self::zeros(arch, outputs);
        if let Architecture::Mlp { layers } = &model.arch {
            let mut sizes = layers.clone();
            sizes.push(outputs);
            let mut offset = 0;
            let last = sizes.len() - 2;
            for (l, w) in sizes.windows(2).enumerate() {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let scale = if l == last { output_scale } else { 1.0 };
                for p in &mut model.params[offset..offset + fan_in * fan_out] {
                    *p = rng.random_range(-bound..bound) * scale;
                }
                offset += fan_in * fan_out + fan_out;
            }
        }
        model
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn forward(&self, obs: &Observation) -> Result<Vec<f64>, TrainerError> {
        let mut tape = Tape::default();
        self.forward_with(&self.params, obs, &mut tape)?;
        Ok(tape.acts.pop().unwrap_or_default())
    }

    /// Forward pass with explicit parameters (used by finite differences).
    pub fn forward_with(&self, params: &[f64], obs: &Observation, tape: &mut Tape) -> Result<(), TrainerError> {
        self.arch.check(obs)?;
        tape.acts.clear();
        tape.index = obs.index;
        match &self.arch {
            Architecture::Tabular { .. } => {
                let row = obs.index * self.outputs;
                tape.acts.push(params[row..row + self.outputs].to_vec());
            }
            Architecture::Mlp { layers } => {
                let mut input = obs.features.clone();
                let mut offset = 0;
                let depth = layers.len();
                for l in 0..depth {
                    let fan_in = layers[l];
                    let fan_out = if l + 1 < depth { layers[l + 1] } else { self.outputs };
                    let (w, rest) = params[offset..].split_at(fan_in * fan_out);
                    let b = &rest[..fan_out];
                    let mut out = b.to_vec();
                    for (j, o) in out.iter_mut().enumerate() {
                        let row = &w[j * fan_in..(j + 1) * fan_in];
                        *o += row.iter().zip(&input).map(|(a, x)| a * x).sum::<f64>();
                    }
                    if l + 1 < depth {
                        for o in &mut out {
                            *o = o.tanh();
                        }
                    }
                    offset += fan_in * fan_out + fan_out;
                    tape.acts.push(std::mem::replace(&mut input, out));
                }
                tape.acts.push(input);
            }
        }
        Ok(())
    }

    /// Accumulates `d(loss)/d(params)` into `grad` given `d(loss)/d(output)`.
    pub fn backward(&self, params: &[f64], tape: &Tape, d_out: &[f64], grad: &mut [f64]) {
        match &self.arch {
            Architecture::Tabular { .. } => {
                let row = tape.index * self.outputs;
                for (g, d) in grad[row..row + self.outputs].iter_mut().zip(d_out) {
                    *g += d;
                }
            }
            Architecture::Mlp { layers } => {
                let depth = layers.len();
                let mut offsets = Vec::with_capacity(depth);
                let mut offset = 0;
                for l in 0..depth {
                    offsets.push(offset);
                    let fan_out = if l + 1 < depth { layers[l + 1] } else { self.outputs };
                    offset += layers[l] * fan_out + fan_out;
                }
                let mut delta = d_out.to_vec();
                for l in (0..depth).rev() {
                    let fan_in = layers[l];
                    let fan_out = delta.len();
                    let input = &tape.acts[l];
                    let base = offsets[l];
                    for j in 0..fan_out {
                        let dj = delta[j];
                        if dj == 0.0 {
                            continue;
                        }
                        let row = &mut grad[base + j * fan_in..base + (j + 1) * fan_in];
                        for (g, x) in row.iter_mut().zip(input) {
                            *g += dj * x;
                        }
                        grad[base + fan_in * fan_out + j] += dj;
                    }
                    if l == 0 {
                        break;
                    }
                    // Through the weights, then through tanh of layer l's input.
                    let w = &params[base..base + fan_in * fan_out];
                    let mut prev = vec![0.0; fan_in];
                    for j in 0..fan_out {
                        let dj = delta[j];
                        if dj == 0.0 {
                            continue;
                        }
                        for (p, a) in prev.iter_mut().zip(&w[j * fan_in..(j + 1) * fan_in]) {
                            *p += dj * a;
                        }
                    }
                    for (p, h) in prev.iter_mut().zip(input) {
                        *p *= 1.0 - h * h;
                    }
                    delta = prev;
                }
            }
        }
    }
}

/// `log softmax(logits)`.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

/// Policy network: softmax over `num_actions` logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams(pub Model);

impl PolicyParams {
    pub fn new<R: Rng + ?Sized>(arch: Architecture, num_actions: usize, rng: &mut R) -> Self {
        Self(Model::init(arch, num_actions, 0.01, rng))
    }

    pub fn num_actions(&self) -> usize {
        self.0.outputs
    }

    pub fn arch(&self) -> &Architecture {
        &self.0.arch
    }

    pub fn logits(&self, obs: &Observation) -> Result<Vec<f64>, TrainerError> {
        self.0.forward(obs)
    }

    pub fn forward(&self, obs: &Observation) -> Result<ActionDistribution, TrainerError> {
        let logits = self.logits(obs)?;
        ActionDistribution::softmax(&logits).map_err(|e| TrainerError::NonFiniteLoss(e.to_string()))
    }
}

/// Value network with a scalar head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueParams(pub Model);

impl ValueParams {
    pub fn new<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Self {
        Self(Model::init(arch, 1, 1.0, rng))
    }

    pub fn value(&self, obs: &Observation) -> Result<f64, TrainerError> {
        Ok(self.0.forward(obs)?[0])
    }
}
