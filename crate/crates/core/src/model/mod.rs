//! A small residual CNN with a two-layer dropout head, softmax output,
//! cross-entropy loss and SGD with momentum.

mod checkpoint;
mod net;
pub mod ops;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CheckpointMeta,
};
pub use net::{param_shapes, standardize, DropoutMasks, Network, ParamSet, Trace};
pub use ops::Scalar;

use crate::rng::{self, Rng};
use crate::spectro::Grid;

const INIT_STREAM: u64 = 0x1417;
const DROPOUT_STREAM: u64 = 0xd209;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid architecture: {0}")]
    Config(String),
    #[error("expected {expected} parameter tensors, got {got}")]
    ParamCount { expected: usize, got: usize },
    #[error("parameter tensor {index} has {got} values, expected {expected}")]
    ParamShape {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("input grid {rows}x{cols} does not fit a model with {max_rows} mel rows")]
    InputShape {
        rows: usize,
        cols: usize,
        max_rows: usize,
    },
    #[error("dropout masks do not match the hidden layer widths")]
    MaskShape,
    #[error("batch is empty")]
    EmptyBatch,
    #[error("batch has {inputs} inputs but {labels} labels")]
    BatchMismatch { inputs: usize, labels: usize },
    #[error("label {0} is out of range")]
    Label(usize),
    #[error("learning rate must be positive and momentum in [0, 1)")]
    Optimizer,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    pub input_mels: usize,
    /// `(channels, stride)` of each stage's entry convolution.
    pub conv_stages: Vec<(usize, usize)>,
    pub blocks_per_stage: usize,
    pub fc_widths: Vec<usize>,
    pub n_classes: usize,
    pub dropout_rate: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            input_mels: 64,
            conv_stages: vec![(8, 2), (16, 2), (32, 2)],
            blocks_per_stage: 1,
            fc_widths: vec![128, 128],
            n_classes: 4,
            dropout_rate: 0.3,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.input_mels == 0 {
            return bad("input_mels must be positive");
        }
        if self.conv_stages.is_empty() {
            return bad("at least one conv stage is required");
        }
        if self.conv_stages.iter().any(|&(c, s)| c == 0 || s == 0) {
            return bad("stage channels and strides must be positive");
        }
        if self.fc_widths.contains(&0) {
            return bad("fc widths must be positive");
        }
        if self.n_classes != 2 && self.n_classes != 4 {
            return bad("n_classes must be 2 or 4");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must be in [0, 1)");
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        param_shapes(self)
            .iter()
            .map(|s| s.iter().product::<usize>())
            .sum()
    }
}

/// Mel grids and class indices. Inputs keep their own shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    inputs: Vec<Grid>,
    labels: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: Vec<Grid>, labels: Vec<usize>) -> Result<Self, ModelError> {
        if inputs.len() != labels.len() {
            return Err(ModelError::BatchMismatch {
                inputs: inputs.len(),
                labels: labels.len(),
            });
        }
        if inputs.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        Ok(Self { inputs, labels })
    }

    pub fn inputs(&self) -> &[Grid] {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Result of a paired forward/backward pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub grads: ParamSet<f32>,
    pub loss: f64,
    pub probs: Vec<Vec<f64>>,
}

/// Trainable network with optimizer velocity and its dropout generator.
#[derive(Debug, Clone)]
pub struct Model {
    net: Network<f32>,
    velocity: ParamSet<f32>,
    rng: Rng,
    seed: u64,
}

/// Fresh model: conv and hidden weights uniform in `±sqrt(6 / fan_in)`,
/// output weights uniform in `±1 / sqrt(fan_in)`, biases zero.
pub fn build_model(config: &ArchConfig, seed: u64) -> Result<Model, ModelError> {
    config.validate()?;
    let shapes = param_shapes(config);
    let mut init = rng::stream(seed, &[INIT_STREAM]);
    let last_w = shapes.len() - 2;
    let params: ParamSet<f32> = shapes
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let n: usize = s.iter().product();
            if s.len() == 1 {
                return vec![0.0; n];
            }
            let fan_in: usize = s[1..].iter().product();
            let bound = if i == last_w {
                1.0 / (fan_in as f64).sqrt()
            } else {
                (6.0 / fan_in as f64).sqrt()
            };
            (0..n)
                .map(|_| init.random_range(-bound..bound) as f32)
                .collect()
        })
        .collect();
    let net = Network::from_params(config.clone(), params)?;
    Ok(Model::from_network(net, seed))
}

/// Mean of `-ln p[label]` with `p` clamped at 1e-12.
pub fn loss(probs: &[Vec<f64>], labels: &[usize]) -> f64 {
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(p, &y)| -p[y].max(1e-12).ln())
        .sum();
    total / probs.len() as f64
}

/// One momentum step: `v = momentum * v + g`, `w -= lr * v`.
pub fn sgd_update<T: Scalar>(
    params: &mut ParamSet<T>,
    velocity: &mut ParamSet<T>,
    grads: &ParamSet<T>,
    lr: f64,
    momentum: f64,
) -> Result<(), ModelError> {
    if !(lr > 0.0 && lr.is_finite()) || !(0.0..1.0).contains(&momentum) {
        return Err(ModelError::Optimizer);
    }
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(ModelError::ParamCount {
            expected: params.len(),
            got: grads.len(),
        });
    }
    let (lr, mu) = (T::of(lr), T::of(momentum));
    for (i, ((w, v), g)) in params
        .iter_mut()
        .zip(velocity.iter_mut())
        .zip(grads)
        .enumerate()
    {
        if w.len() != g.len() || w.len() != v.len() {
            return Err(ModelError::ParamShape {
                index: i,
                expected: w.len(),
                got: g.len(),
            });
        }
        for ((w, v), &g) in w.iter_mut().zip(v.iter_mut()).zip(g) {
            *v = mu * *v + g;
            *w = *w - lr * *v;
        }
    }
    Ok(())
}

impl Model {
    pub fn from_network(net: Network<f32>, seed: u64) -> Self {
        let velocity = net.zeros_like();
        Self {
            net,
            velocity,
            rng: rng::stream(seed, &[DROPOUT_STREAM]),
            seed,
        }
    }

    pub fn network(&self) -> &Network<f32> {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network<f32> {
        &mut self.net
    }

    pub fn arch(&self) -> &ArchConfig {
        self.net.arch()
    }

    pub fn velocity(&self) -> &ParamSet<f32> {
        &self.velocity
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dropout_rng(&self) -> &Rng {
        &self.rng
    }

    pub(crate) fn set_state(&mut self, velocity: ParamSet<f32>, rng: Rng) {
        self.velocity = velocity;
        self.rng = rng;
    }

    /// Resets the dropout stream, e.g. when a clone starts fine-tuning.
    pub fn reseed_dropout(&mut self, seed: u64, tag: u64) {
        self.rng = rng::stream(seed, &[DROPOUT_STREAM, tag]);
    }

    /// Clears the optimizer velocity.
    pub fn reset_velocity(&mut self) {
        self.velocity = self.net.zeros_like();
    }

    fn draw_masks(&mut self, n: usize) -> Option<Vec<DropoutMasks<f32>>> {
        let rate = self.net.arch().dropout_rate;
        if rate == 0.0 {
            return None;
        }
        let keep = (1.0 / (1.0 - rate)) as f32;
        let widths = self.net.arch().fc_widths.clone();
        Some(
            (0..n)
                .map(|_| {
                    widths
                        .iter()
                        .map(|&w| {
                            (0..w)
                                .map(|_| {
                                    if self.rng.random::<f64>() < rate {
                                        0.0
                                    } else {
                                        keep
                                    }
                                })
                                .collect()
                        })
                        .collect()
                })
                .collect(),
        )
    }

    /// Class probabilities per input. Dropout is applied only when
    /// `training` is set, drawing masks from the model's generator.
    pub fn forward(&mut self, batch: &Batch, training: bool) -> Result<Vec<Vec<f64>>, ModelError> {
        let mut masks = if training {
            self.draw_masks(batch.len())
        } else {
            None
        }
        .map(Vec::into_iter);
        batch
            .inputs
            .iter()
            .map(|x| {
                Ok(self
                    .net
                    .forward_trace(x, masks.as_mut().and_then(Iterator::next))?
                    .probs)
            })
            .collect()
    }

    /// Probabilities for one grid with dropout off.
    pub fn predict(&self, grid: &Grid) -> Result<Vec<f64>, ModelError> {
        self.net.predict(grid)
    }

    /// Training-mode forward and exact backward pass with one set of
    /// dropout masks shared by both.
    pub fn backward(&mut self, batch: &Batch) -> Result<Gradients, ModelError> {
        let masks = self.draw_masks(batch.len());
        let (probs, loss, grads) = self
            .net
            .loss_and_grads(&batch.inputs, &batch.labels, masks)?;
        Ok(Gradients { grads, loss, probs })
    }

    pub fn sgd_step(
        &mut self,
        grads: &ParamSet<f32>,
        lr: f64,
        momentum: f64,
    ) -> Result<(), ModelError> {
        sgd_update(
            self.net.params_mut(),
            &mut self.velocity,
            grads,
            lr,
            momentum,
        )
    }
}
