//! Transformer encoder with a dense softmax classification head.
//!
//! The backbone is embeddings (token + position + segment, layer-normed)
//! followed by `L` self-attention layers with feed-forward sublayers, then a
//! tanh pooler over the `[CLS]` hidden state. Dropout applies to the pooled
//! vector only, and only in train mode. In the default frozen configuration
//! exactly the head weight and bias are trainable.

mod backward;
mod forward;

pub use backward::{backward, head_gradients, logit_gradient, GradientSet};
pub use forward::{
    attention_layer, extract_features, extract_features_batch, forward, forward_traced, gelu,
    gelu_derivative, head_stage, softmax, ForwardOutput, ForwardTrace, LayerTrace, LnTrace,
};

use std::collections::HashMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::checkpoint::{self, CheckpointError};
use crate::tensor::{Scalar, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("invalid encoder config: {message}")]
    InvalidConfig { message: String },
    #[error("token id {id} at position {position} is out of range (vocab size {vocab_size})")]
    IdOutOfRange {
        id: u32,
        position: usize,
        vocab_size: usize,
    },
    #[error("token sequence length {actual} does not match config max_len {expected}")]
    BadSequenceLength { expected: usize, actual: usize },
    #[error("backward requires a train-mode trace; this trace was recorded in eval mode")]
    EvalTrace,
    #[error("gold label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("unknown tensor {name:?} in checkpoint")]
    UnknownTensor { name: String },
    #[error("checkpoint is missing tensor {name:?}")]
    MissingTensor { name: String },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

pub const DEFAULT_MAX_LEN: usize = 128;
pub const DEFAULT_NUM_CLASSES: usize = 100;
pub const DEFAULT_DROPOUT: f64 = 0.2;
pub const DEFAULT_LAYER_NORM_EPS: f64 = 1e-12;
/// Standard deviation for weight initialization.
pub const INIT_STD: f64 = 0.02;

/// Reference full-scale backbone dimensions (frozen in published runs).
pub const REFERENCE_NUM_LAYERS: usize = 24;
pub const REFERENCE_HIDDEN: usize = 1024;
pub const REFERENCE_NUM_HEADS: usize = 16;
pub const REFERENCE_FF_DIM: usize = 4096;

/// Architecture and numeric settings for the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub hidden: usize,
    pub num_heads: usize,
    pub ff_dim: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    pub num_classes: usize,
    pub dropout: f64,
    pub layer_norm_eps: f64,
}

impl EncoderConfig {
    /// Desk-scale constructor: defaults for max_len (128), num_classes (100),
    /// dropout (0.2), and layer-norm epsilon (1e-12).
    pub fn new(
        num_layers: usize,
        hidden: usize,
        num_heads: usize,
        ff_dim: usize,
        vocab_size: usize,
    ) -> Self {
        EncoderConfig {
            num_layers,
            hidden,
            num_heads,
            ff_dim,
            vocab_size,
            max_len: DEFAULT_MAX_LEN,
            num_classes: DEFAULT_NUM_CLASSES,
            dropout: DEFAULT_DROPOUT,
            layer_norm_eps: DEFAULT_LAYER_NORM_EPS,
        }
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        let fail = |message: String| Err(EncoderError::InvalidConfig { message });
        if self.num_layers == 0
            || self.hidden == 0
            || self.num_heads == 0
            || self.ff_dim == 0
            || self.vocab_size == 0
            || self.num_classes == 0
        {
            return fail("all dimensions must be positive".to_string());
        }
        if !self.hidden.is_multiple_of(self.num_heads) {
            return fail(format!(
                "hidden {} not divisible by heads {}",
                self.hidden, self.num_heads
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0,1)", self.dropout));
        }
        if self.max_len < 2 {
            return fail(format!("max_len {} below 2", self.max_len));
        }
        if self.layer_norm_eps <= 0.0 {
            return fail(format!(
                "layer_norm_eps {} not positive",
                self.layer_norm_eps
            ));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.num_heads
    }

    /// Expected tensor (name, shape) pairs in canonical order.
    pub fn tensor_layout(&self) -> Vec<(String, Vec<usize>)> {
        let (h, f) = (self.hidden, self.ff_dim);
        let mut layout = vec![
            ("embeddings.token".to_string(), vec![self.vocab_size, h]),
            ("embeddings.position".to_string(), vec![self.max_len, h]),
            ("embeddings.segment".to_string(), vec![2, h]),
            ("embeddings.layer_norm.scale".to_string(), vec![h]),
            ("embeddings.layer_norm.shift".to_string(), vec![h]),
        ];
        for i in 0..self.num_layers {
            for proj in ["query", "key", "value", "output"] {
                layout.push((format!("layer{i}.attention.{proj}.weight"), vec![h, h]));
                layout.push((format!("layer{i}.attention.{proj}.bias"), vec![h]));
            }
            layout.push((format!("layer{i}.attention.layer_norm.scale"), vec![h]));
            layout.push((format!("layer{i}.attention.layer_norm.shift"), vec![h]));
            layout.push((format!("layer{i}.ffn.inner.weight"), vec![h, f]));
            layout.push((format!("layer{i}.ffn.inner.bias"), vec![f]));
            layout.push((format!("layer{i}.ffn.output.weight"), vec![f, h]));
            layout.push((format!("layer{i}.ffn.output.bias"), vec![h]));
            layout.push((format!("layer{i}.ffn.layer_norm.scale"), vec![h]));
            layout.push((format!("layer{i}.ffn.layer_norm.shift"), vec![h]));
        }
        layout.push(("pooler.weight".to_string(), vec![h, h]));
        layout.push(("pooler.bias".to_string(), vec![h]));
        layout.push(("head.weight".to_string(), vec![h, self.num_classes]));
        layout.push(("head.bias".to_string(), vec![self.num_classes]));
        layout
    }

    pub fn total_parameter_count(&self) -> usize {
        self.tensor_layout()
            .iter()
            .map(|(_, shape)| shape.iter().product::<usize>())
            .sum()
    }

    /// Trainable parameters under the given mode. Frozen mode trains exactly
    /// the head: `hidden * num_classes + num_classes`.
    pub fn trainable_parameter_count(&self, mode: TrainMode) -> usize {
        match mode {
            TrainMode::FrozenHead => self.hidden * self.num_classes + self.num_classes,
            TrainMode::FullFineTune => self.total_parameter_count(),
        }
    }
}

/// Which parameter subset training may update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    FrozenHead,
    FullFineTune,
}

/// Forward-pass mode. Train mode applies dropout to the pooled vector using
/// draws seeded by `dropout_seed`; eval mode applies none.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train { dropout_seed: u64 },
    Eval,
}

#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub tensor: Tensor<T>,
    pub trainable: bool,
}

/// Named tensors in canonical order with per-tensor trainable flags.
#[derive(Debug, Clone)]
pub struct ParameterSet<T> {
    params: Vec<Param<T>>,
    index: HashMap<String, usize>,
}

fn head_tensor(name: &str) -> bool {
    name == "head.weight" || name == "head.bias"
}

impl<T: Scalar> ParameterSet<T> {
    fn from_params(params: Vec<Param<T>>) -> Self {
        let index = params
            .iter()
            .enumerate()
            .map(|(i, p)| (p.name.clone(), i))
            .collect();
        ParameterSet { params, index }
    }

    pub fn get(&self, name: &str) -> &Tensor<T> {
        &self.params[self.index[name]].tensor
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor<T> {
        let i = self.index[name];
        &mut self.params[i].tensor
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn trainable(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter().filter(|p| p.trainable)
    }

    pub fn trainable_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut().filter(|p| p.trainable)
    }

    pub fn trainable_parameter_count(&self) -> usize {
        self.trainable().map(|p| p.tensor.len()).sum()
    }

    pub fn total_parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    /// Frozen mode marks exactly the head tensors trainable; full fine-tuning
    /// marks everything.
    pub fn set_train_mode(&mut self, mode: TrainMode) {
        for p in &mut self.params {
            p.trainable = match mode {
                TrainMode::FrozenHead => head_tensor(&p.name),
                TrainMode::FullFineTune => true,
            };
        }
    }

    pub fn any_backbone_trainable(&self) -> bool {
        self.params
            .iter()
            .any(|p| p.trainable && !head_tensor(&p.name))
    }

    /// Widens / narrows scalar type; flags preserved.
    pub fn cast<U: Scalar>(&self) -> ParameterSet<U> {
        ParameterSet::from_params(
            self.params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    tensor: p.tensor.cast(),
                    trainable: p.trainable,
                })
                .collect(),
        )
    }
}

impl ParameterSet<f32> {
    /// Tensors in canonical order, for serialization.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<f32>)> {
        self.params
            .iter()
            .map(|p| (p.name.clone(), &p.tensor))
            .collect()
    }
}

/// Draws weights from normal(0, 0.02), zeroes biases and layer-norm shifts,
/// and sets layer-norm scales to 1. Deterministic for a given seed; the head
/// is the only trainable tensor until [`ParameterSet::set_train_mode`] says
/// otherwise.
pub fn init_parameters<T: Scalar>(
    config: &EncoderConfig,
    seed: u64,
) -> Result<ParameterSet<T>, EncoderError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0f64, INIT_STD).expect("valid distribution");
    let mut params = Vec::new();
    for (name, shape) in config.tensor_layout() {
        let len: usize = shape.iter().product();
        let data: Vec<T> = if name.ends_with(".scale") {
            vec![T::one(); len]
        } else if name.ends_with(".bias") || name.ends_with(".shift") {
            vec![T::zero(); len]
        } else {
            (0..len)
                .map(|_| T::from_f64(normal.sample(&mut rng)))
                .collect()
        };
        let trainable = head_tensor(&name);
        params.push(Param {
            name,
            tensor: Tensor::from_vec(&shape, data),
            trainable,
        });
    }
    Ok(ParameterSet::from_params(params))
}

/// Restores a parameter set from a checkpoint, validating every tensor name
/// and shape against the config. Reserved `adam.*` entries (optimizer state)
/// are ignored here; the trainer reads them separately.
pub fn load_parameters(
    path: &Path,
    config: &EncoderConfig,
) -> Result<ParameterSet<f32>, EncoderError> {
    config.validate()?;
    let tensors = checkpoint::load(path)?;
    parameters_from_tensors(tensors, config)
}

pub fn parameters_from_tensors(
    tensors: Vec<(String, Tensor<f32>)>,
    config: &EncoderConfig,
) -> Result<ParameterSet<f32>, EncoderError> {
    let layout = config.tensor_layout();
    let expected: HashMap<&str, &[usize]> = layout
        .iter()
        .map(|(n, s)| (n.as_str(), s.as_slice()))
        .collect();
    let mut loaded: HashMap<String, Tensor<f32>> = HashMap::new();
    for (name, tensor) in tensors {
        if name.starts_with("adam.") {
            continue;
        }
        match expected.get(name.as_str()) {
            None => return Err(EncoderError::UnknownTensor { name }),
            Some(shape) => {
                if tensor.shape() != *shape {
                    return Err(TensorError::ShapeMismatch {
                        name,
                        expected: shape.to_vec(),
                        actual: tensor.shape().to_vec(),
                    }
                    .into());
                }
            }
        }
        loaded.insert(name, tensor);
    }
    let mut params = Vec::with_capacity(layout.len());
    for (name, _) in layout {
        let tensor = loaded
            .remove(&name)
            .ok_or_else(|| EncoderError::MissingTensor { name: name.clone() })?;
        let trainable = head_tensor(&name);
        params.push(Param {
            name,
            tensor,
            trainable,
        });
    }
    Ok(ParameterSet::from_params(params))
}
