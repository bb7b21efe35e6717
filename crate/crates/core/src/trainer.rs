//! Training loop: cross-entropy loss, adaptive-moment optimization, seeded
//! epoch shuffling, validation-based model selection, checkpointing with
//! optimizer state, and a cached-feature fast path for frozen-backbone runs
//! that reproduces the full loop's head parameters bit for bit.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::checkpoint::{self, CheckpointError};
use crate::encoder::{
    backward, extract_features, forward_traced, head_gradients, head_stage, logit_gradient,
    parameters_from_tensors, softmax, EncoderConfig, EncoderError, GradientSet, Mode, ParameterSet,
    TrainMode,
};
use crate::metrics::{self, MetricsError};
use crate::tensor::{Scalar, Tensor, TensorError};
use crate::tokenizer::TokenSequence;

#[derive(Debug, Error)]
pub enum TrainerError {
    #[error("invalid train config: {message}")]
    InvalidConfig { message: String },
    #[error("cannot train on an empty example list")]
    EmptyCorpus,
    #[error("gold label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("cached-feature training requires FrozenHead mode")]
    CacheRequiresFrozenHead,
    #[error("optimizer state in checkpoint is incomplete: {message}")]
    BadOptimizerState { message: String },
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// Hyperparameters of one training run. The model-selection metric is fixed:
/// validation micro-F1, ties resolved toward the earlier epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub mode: TrainMode,
    /// Precompute pooled features once and train the head on them. Only valid
    /// with a frozen backbone.
    pub feature_cache: bool,
}

pub const DEFAULT_EPOCHS: usize = 5;
pub const DEFAULT_BATCH_SIZE: usize = 32;
pub const DEFAULT_HEAD_LEARNING_RATE: f64 = 1e-3;
pub const DEFAULT_FULL_LEARNING_RATE: f64 = 2e-5;

impl TrainConfig {
    /// Head-only training defaults: a linear model over fixed features
    /// tolerates a large step size.
    pub fn frozen_head(seed: u64) -> Self {
        TrainConfig {
            epochs: DEFAULT_EPOCHS,
            batch_size: DEFAULT_BATCH_SIZE,
            learning_rate: DEFAULT_HEAD_LEARNING_RATE,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed,
            mode: TrainMode::FrozenHead,
            feature_cache: false,
        }
    }

    pub fn full_fine_tune(seed: u64) -> Self {
        TrainConfig {
            learning_rate: DEFAULT_FULL_LEARNING_RATE,
            mode: TrainMode::FullFineTune,
            ..TrainConfig::frozen_head(seed)
        }
    }

    pub fn validate(&self) -> Result<(), TrainerError> {
        let fail = |message: String| Err(TrainerError::InvalidConfig { message });
        if self.epochs == 0 {
            return fail("epochs must be at least 1".to_string());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".to_string());
        }
        if self.learning_rate <= 0.0 {
            return fail(format!(
                "learning_rate {} must be positive",
                self.learning_rate
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail("moment decays must lie in [0, 1)".to_string());
        }
        if self.epsilon <= 0.0 {
            return fail(format!("epsilon {} must be positive", self.epsilon));
        }
        if self.feature_cache && self.mode != TrainMode::FrozenHead {
            return fail("feature_cache requires FrozenHead mode".to_string());
        }
        Ok(())
    }
}

/// One encoded training example.
#[derive(Debug, Clone)]
pub struct Example {
    pub tokens: TokenSequence,
    pub label: usize,
}

/// Token-encoded train/validation/test splits.
#[derive(Debug, Clone, Default)]
pub struct EncodedSplits {
    pub train: Vec<Example>,
    pub validation: Vec<Example>,
    pub test: Vec<Example>,
}

/// First and second moment estimates for every trainable tensor, plus the
/// global step counter.
#[derive(Debug, Clone)]
pub struct OptimizerState<T> {
    step: u64,
    moments: Vec<MomentPair<T>>,
}

#[derive(Debug, Clone)]
struct MomentPair<T> {
    name: String,
    m: Tensor<T>,
    v: Tensor<T>,
}

impl<T: Scalar> OptimizerState<T> {
    /// Zero moments shaped like the currently trainable tensors.
    pub fn new(params: &ParameterSet<T>) -> Self {
        let moments = params
            .trainable()
            .map(|p| MomentPair {
                name: p.name.clone(),
                m: Tensor::zeros(p.tensor.shape()),
                v: Tensor::zeros(p.tensor.shape()),
            })
            .collect();
        OptimizerState { step: 0, moments }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// One adaptive-moment update. Gradients must cover every tracked tensor.
    pub fn apply(
        &mut self,
        params: &mut ParameterSet<T>,
        grads: &GradientSet<T>,
        config: &TrainConfig,
    ) {
        self.step += 1;
        let c1 = T::from_f64(1.0 - config.beta1.powi(self.step as i32));
        let c2 = T::from_f64(1.0 - config.beta2.powi(self.step as i32));
        let lr = T::from_f64(config.learning_rate);
        let b1 = T::from_f64(config.beta1);
        let b2 = T::from_f64(config.beta2);
        let one_minus_b1 = T::from_f64(1.0 - config.beta1);
        let one_minus_b2 = T::from_f64(1.0 - config.beta2);
        let eps = T::from_f64(config.epsilon);
        for pair in &mut self.moments {
            let grad = grads
                .get(&pair.name)
                .unwrap_or_else(|| panic!("missing gradient for {}", pair.name));
            let theta = params.get_mut(&pair.name);
            for ((t, &g), (m, v)) in theta
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(pair.m.data_mut().iter_mut().zip(pair.v.data_mut()))
            {
                *m = b1 * *m + one_minus_b1 * g;
                *v = b2 * *v + one_minus_b2 * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *t = *t - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }

    #[cfg(test)]
    fn pair(&self, name: &str) -> Option<&MomentPair<T>> {
        self.moments.iter().find(|p| p.name == name)
    }
}

const SPLITMIX_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(seed: u64) -> u64 {
    let mut z = seed.wrapping_add(SPLITMIX_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Decorrelated sub-seed for (base seed, stream, index). Stream 1 drives the
/// per-epoch shuffle; stream 2 drives per-example dropout.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(base) ^ stream) ^ index)
}

const SHUFFLE_STREAM: u64 = 1;
const DROPOUT_STREAM: u64 = 2;

/// Loss for one example given softmax probabilities: `-ln(p[gold])`, with the
/// probability clamped at 1e-12 to keep the logarithm finite.
pub fn cross_entropy<T: Scalar>(probabilities: &[T], gold: usize) -> Result<f64, TrainerError> {
    if gold >= probabilities.len() {
        return Err(TrainerError::LabelOutOfRange {
            label: gold,
            num_classes: probabilities.len(),
        });
    }
    Ok(-probabilities[gold].to_f64().max(1e-12).ln())
}

/// Index of the first maximum.
pub fn argmax<T: Scalar>(values: &[T]) -> usize {
    assert!(!values.is_empty(), "argmax over an empty slice");
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// One epoch's worth of training data: full token sequences pushed through
/// the encoder, or precomputed pooled features for head-only training.
pub enum EpochData<'a, T> {
    Full(&'a [Example]),
    Cached {
        features: &'a Tensor<T>,
        labels: &'a [usize],
    },
}

impl<T> EpochData<'_, T> {
    pub fn len(&self) -> usize {
        match self {
            EpochData::Full(examples) => examples.len(),
            EpochData::Cached { labels, .. } => labels.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Runs one epoch: seeded shuffle, contiguous batches (the last partial batch
/// kept), one optimizer step per batch with gradients averaged over the
/// batch. Returns the mean loss over all examples. The two data forms run
/// identical head arithmetic, which is what makes the cached path reproduce
/// the full path bit for bit under a frozen backbone.
pub fn train_epoch<T: Scalar>(
    params: &mut ParameterSet<T>,
    optimizer: &mut OptimizerState<T>,
    data: EpochData<'_, T>,
    config: &TrainConfig,
    encoder_config: &EncoderConfig,
    epoch_index: usize,
) -> Result<f64, TrainerError> {
    config.validate()?;
    let n = data.len();
    if n == 0 {
        return Err(TrainerError::EmptyCorpus);
    }
    let mut order: Vec<usize> = (0..n).collect();
    let shuffle_seed = derive_seed(config.seed, SHUFFLE_STREAM, epoch_index as u64);
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));

    let mut total_loss = 0.0;
    for (batch_number, batch) in order.chunks(config.batch_size).enumerate() {
        let mut grads = GradientSet::zeros(encoder_config, config.mode);
        for (offset, &example_index) in batch.iter().enumerate() {
            let position = batch_number * config.batch_size + offset;
            let dropout_seed = derive_seed(
                config.seed,
                DROPOUT_STREAM,
                (epoch_index as u64) * (n as u64) + position as u64,
            );
            let mode = Mode::Train { dropout_seed };
            let example_grads = match &data {
                EpochData::Full(examples) => {
                    let example = &examples[example_index];
                    let trace = forward_traced(params, encoder_config, &example.tokens, mode)?;
                    let probs = softmax(&trace.logits);
                    total_loss += cross_entropy(&probs, example.label)?;
                    backward(params, encoder_config, &trace, example.label, config.mode)?
                }
                EpochData::Cached { features, labels } => {
                    let label = labels[example_index];
                    if label >= encoder_config.num_classes {
                        return Err(TrainerError::LabelOutOfRange {
                            label,
                            num_classes: encoder_config.num_classes,
                        });
                    }
                    let pooled = features.row(example_index);
                    let (_, dropped, logits) = head_stage(pooled, params, encoder_config, mode);
                    let probs = softmax(&logits);
                    total_loss += cross_entropy(&probs, label)?;
                    let dz = logit_gradient(&logits, label);
                    let (d_weight, d_bias) = head_gradients(&dropped, &dz);
                    GradientSet::from_head(d_weight, d_bias)
                }
            };
            grads.accumulate(&example_grads);
        }
        grads.scale(T::from_f64(1.0 / batch.len() as f64));
        optimizer.apply(params, &grads, config);
    }
    Ok(total_loss / n as f64)
}

/// Per-epoch record, exported as one CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    /// 1-based epoch index.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_micro_f1: f64,
    pub val_macro_f1: f64,
    pub seconds: f64,
}

/// Renders epoch logs as CSV. `zero_seconds` replaces wall-clock timings with
/// 0.000 so reruns can compare outputs byte for byte.
pub fn epoch_log_csv(logs: &[EpochLog], zero_seconds: bool) -> String {
    let mut out = String::from("epoch,train_loss,val_micro_f1,val_macro_f1,seconds\n");
    for log in logs {
        let seconds = if zero_seconds { 0.0 } else { log.seconds };
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.3}\n",
            log.epoch, log.train_loss, log.val_micro_f1, log.val_macro_f1, seconds
        ));
    }
    out
}

/// Outcome of a training run: parameters from the best validation epoch, the
/// full epoch log, and how many encoder forward passes each epoch performed.
#[derive(Debug, Clone)]
pub struct FitResult<T> {
    pub params: ParameterSet<T>,
    pub logs: Vec<EpochLog>,
    /// 1-based index of the selected epoch.
    pub best_epoch: usize,
    pub encoder_forwards_per_epoch: Vec<u64>,
}

/// Index (1-based) of the best score, earliest on ties.
pub fn select_best(scores: &[f64]) -> usize {
    assert!(!scores.is_empty(), "selection over zero epochs");
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best + 1
}

/// Gold labels and argmax predictions over full forward passes in eval mode.
pub fn evaluate<T: Scalar>(
    params: &ParameterSet<T>,
    encoder_config: &EncoderConfig,
    examples: &[Example],
) -> Result<metrics::SummaryReport, TrainerError> {
    let mut golds = Vec::with_capacity(examples.len());
    let mut preds = Vec::with_capacity(examples.len());
    for example in examples {
        let trace = forward_traced(params, encoder_config, &example.tokens, Mode::Eval)?;
        golds.push(example.label);
        preds.push(argmax(&trace.logits));
    }
    let matrix = metrics::confusion(&golds, &preds, encoder_config.num_classes)?;
    Ok(metrics::summary_report(&matrix)?)
}

/// Same metrics as [`evaluate`], from cached pooled features.
pub fn evaluate_cached<T: Scalar>(
    params: &ParameterSet<T>,
    encoder_config: &EncoderConfig,
    features: &Tensor<T>,
    labels: &[usize],
) -> Result<metrics::SummaryReport, TrainerError> {
    let mut preds = Vec::with_capacity(labels.len());
    for i in 0..labels.len() {
        let (_, _, logits) = head_stage(features.row(i), params, encoder_config, Mode::Eval);
        preds.push(argmax(&logits));
    }
    let matrix = metrics::confusion(labels, &preds, encoder_config.num_classes)?;
    Ok(metrics::summary_report(&matrix)?)
}

/// Trains for exactly `config.epochs` epochs, evaluating validation micro-F1
/// after each, and returns the parameter snapshot from the best epoch
/// (earliest on ties).
pub fn fit<T: Scalar>(
    splits: &EncodedSplits,
    mut params: ParameterSet<T>,
    config: &TrainConfig,
    encoder_config: &EncoderConfig,
) -> Result<FitResult<T>, TrainerError> {
    config.validate()?;
    encoder_config.validate()?;
    params.set_train_mode(config.mode);
    let mut optimizer = OptimizerState::new(&params);
    let mut logs = Vec::with_capacity(config.epochs);
    let mut forwards = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, ParameterSet<T>)> = None;
    for epoch_index in 0..config.epochs {
        let start = Instant::now();
        let train_loss = train_epoch(
            &mut params,
            &mut optimizer,
            EpochData::Full(&splits.train),
            config,
            encoder_config,
            epoch_index,
        )?;
        let summary = evaluate(&params, encoder_config, &splits.validation)?;
        forwards.push((splits.train.len() + splits.validation.len()) as u64);
        logs.push(EpochLog {
            epoch: epoch_index + 1,
            train_loss,
            val_micro_f1: summary.micro_f1,
            val_macro_f1: summary.macro_f1,
            seconds: start.elapsed().as_secs_f64(),
        });
        let is_better = best
            .as_ref()
            .is_none_or(|(score, _, _)| summary.micro_f1 > *score);
        if is_better {
            best = Some((summary.micro_f1, epoch_index + 1, params.clone()));
        }
    }
    let (_, best_epoch, best_params) = best.expect("at least one epoch ran");
    Ok(FitResult {
        params: best_params,
        logs,
        best_epoch,
        encoder_forwards_per_epoch: forwards,
    })
}

/// Frozen-backbone training over precomputed pooled features. Extraction runs
/// one eval-mode forward pass per clause (counted in the first epoch's
/// bucket); epochs two onward touch the encoder zero times. Shuffle order and
/// dropout draws match [`fit`] exactly, so the returned head parameters are
/// bit-identical to a full run.
pub fn fit_cached<T: Scalar>(
    splits: &EncodedSplits,
    mut params: ParameterSet<T>,
    config: &TrainConfig,
    encoder_config: &EncoderConfig,
) -> Result<FitResult<T>, TrainerError> {
    config.validate()?;
    encoder_config.validate()?;
    if config.mode != TrainMode::FrozenHead {
        return Err(TrainerError::CacheRequiresFrozenHead);
    }
    params.set_train_mode(TrainMode::FrozenHead);

    let extract_all = |examples: &[Example],
                       params: &ParameterSet<T>|
     -> Result<(Tensor<T>, Vec<usize>), TrainerError> {
        let mut data = Vec::with_capacity(examples.len() * encoder_config.hidden);
        let mut labels = Vec::with_capacity(examples.len());
        for example in examples {
            data.extend(extract_features(params, encoder_config, &example.tokens)?);
            labels.push(example.label);
        }
        Ok((
            Tensor::from_vec(&[examples.len(), encoder_config.hidden], data),
            labels,
        ))
    };
    let (train_features, train_labels) = extract_all(&splits.train, &params)?;
    let (val_features, val_labels) = extract_all(&splits.validation, &params)?;
    let extraction_forwards = (splits.train.len() + splits.validation.len()) as u64;

    let mut optimizer = OptimizerState::new(&params);
    let mut logs = Vec::with_capacity(config.epochs);
    let mut forwards = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, ParameterSet<T>)> = None;
    for epoch_index in 0..config.epochs {
        let start = Instant::now();
        let train_loss = train_epoch(
            &mut params,
            &mut optimizer,
            EpochData::Cached {
                features: &train_features,
                labels: &train_labels,
            },
            config,
            encoder_config,
            epoch_index,
        )?;
        let summary = evaluate_cached(&params, encoder_config, &val_features, &val_labels)?;
        forwards.push(if epoch_index == 0 {
            extraction_forwards
        } else {
            0
        });
        logs.push(EpochLog {
            epoch: epoch_index + 1,
            train_loss,
            val_micro_f1: summary.micro_f1,
            val_macro_f1: summary.macro_f1,
            seconds: start.elapsed().as_secs_f64(),
        });
        let is_better = best
            .as_ref()
            .is_none_or(|(score, _, _)| summary.micro_f1 > *score);
        if is_better {
            best = Some((summary.micro_f1, epoch_index + 1, params.clone()));
        }
    }
    let (_, best_epoch, best_params) = best.expect("at least one epoch ran");
    Ok(FitResult {
        params: best_params,
        logs,
        best_epoch,
        encoder_forwards_per_epoch: forwards,
    })
}

/// Reserved checkpoint entry holding the optimizer step counter.
pub const ADAM_STEP_TENSOR: &str = "adam.step";

/// Writes parameters, and optionally optimizer moments under reserved
/// `adam.*` names, in canonical order.
pub fn save_checkpoint(
    params: &ParameterSet<f32>,
    optimizer: Option<&OptimizerState<f32>>,
    path: &std::path::Path,
) -> Result<(), TrainerError> {
    let step_tensor;
    let moment_tensors;
    let mut entries: Vec<(String, &Tensor<f32>)> = params.named_tensors();
    if let Some(opt) = optimizer {
        step_tensor = Tensor::from_vec(&[1], vec![opt.step as f32]);
        moment_tensors = opt
            .moments
            .iter()
            .map(|p| {
                (
                    format!("adam.m.{}", p.name),
                    &p.m,
                    format!("adam.v.{}", p.name),
                    &p.v,
                )
            })
            .collect::<Vec<_>>();
        entries.push((ADAM_STEP_TENSOR.to_string(), &step_tensor));
        for (m_name, m, v_name, v) in &moment_tensors {
            entries.push((m_name.clone(), *m));
            entries.push((v_name.clone(), *v));
        }
    }
    checkpoint::save(&entries, path)?;
    Ok(())
}

/// Restores parameters and, when present, optimizer state. Every tensor is
/// validated against the config; mismatches name the tensor and both shapes.
pub fn load_checkpoint(
    path: &std::path::Path,
    encoder_config: &EncoderConfig,
) -> Result<(ParameterSet<f32>, Option<OptimizerState<f32>>), TrainerError> {
    let tensors = checkpoint::load(path)?;
    let adam: Vec<(String, Tensor<f32>)> = tensors
        .iter()
        .filter(|(name, _)| name.starts_with("adam."))
        .cloned()
        .collect();
    let params = parameters_from_tensors(tensors, encoder_config)?;
    if adam.is_empty() {
        return Ok((params, None));
    }

    let step = adam
        .iter()
        .find(|(name, _)| name == ADAM_STEP_TENSOR)
        .ok_or_else(|| TrainerError::BadOptimizerState {
            message: format!("moment tensors present but {ADAM_STEP_TENSOR} missing"),
        })?;
    if step.1.len() != 1 {
        return Err(TrainerError::BadOptimizerState {
            message: format!("{ADAM_STEP_TENSOR} must hold exactly one value"),
        });
    }
    let mut moments = Vec::new();
    for (name, m) in adam.iter().filter(|(n, _)| n.starts_with("adam.m.")) {
        let param_name = name.trim_start_matches("adam.m.").to_string();
        let expected =
            params_shape(&params, &param_name).ok_or_else(|| TrainerError::BadOptimizerState {
                message: format!("moment {name} has no matching parameter"),
            })?;
        let v = adam
            .iter()
            .find(|(n, _)| n == &format!("adam.v.{param_name}"))
            .ok_or_else(|| TrainerError::BadOptimizerState {
                message: format!("first moment {name} lacks a second moment"),
            })?;
        for (tensor, label) in [(m, "first"), (&v.1, "second")] {
            if tensor.shape() != expected {
                return Err(TrainerError::Encoder(
                    TensorError::ShapeMismatch {
                        name: format!("adam ({label} moment of {param_name})"),
                        expected: expected.to_vec(),
                        actual: tensor.shape().to_vec(),
                    }
                    .into(),
                ));
            }
        }
        moments.push(MomentPair {
            name: param_name,
            m: m.clone(),
            v: v.1.clone(),
        });
    }
    // Order moments canonically so a resumed run updates tensors in the same
    // order as a fresh one.
    let canonical: Vec<String> = encoder_config
        .tensor_layout()
        .into_iter()
        .map(|(name, _)| name)
        .collect();
    moments.sort_by_key(|p| {
        canonical
            .iter()
            .position(|n| n == &p.name)
            .unwrap_or(usize::MAX)
    });
    Ok((
        params,
        Some(OptimizerState {
            step: step.1.data()[0] as u64,
            moments,
        }),
    ))
}

fn params_shape<'a>(params: &'a ParameterSet<f32>, name: &str) -> Option<&'a [usize]> {
    params
        .iter()
        .find(|p| p.name == name)
        .map(|p| p.tensor.shape())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::init_parameters;
    use tempfile::tempdir;

    fn tiny_encoder() -> EncoderConfig {
        EncoderConfig {
            max_len: 6,
            num_classes: 3,
            dropout: 0.1,
            ..EncoderConfig::new(1, 8, 2, 16, 16)
        }
    }

    fn keyword_sequence(class: usize, max_len: usize) -> TokenSequence {
        // [CLS] marker [SEP] padding: each class is identified by token 4+class.
        let mut ids = vec![0u32; max_len];
        ids[0] = 2;
        ids[1] = 4 + class as u32;
        ids[2] = 3;
        let mask = (0..max_len).map(|i| (i < 3) as u8).collect();
        TokenSequence {
            ids,
            mask,
            type_ids: vec![0; max_len],
            true_length: 3,
        }
    }

    fn keyword_splits(num_classes: usize, per_class: usize, max_len: usize) -> EncodedSplits {
        let make = |count: usize| {
            let mut examples = Vec::new();
            for class in 0..num_classes {
                for _ in 0..count {
                    examples.push(Example {
                        tokens: keyword_sequence(class, max_len),
                        label: class,
                    });
                }
            }
            examples
        };
        EncodedSplits {
            train: make(per_class),
            validation: make(1),
            test: make(1),
        }
    }

    #[test]
    fn cross_entropy_oracles() {
        let uniform = vec![0.01f64; 100];
        let loss = cross_entropy(&uniform, 17).unwrap();
        assert!((loss - 100.0f64.ln()).abs() < 1e-12);
        assert!((loss - 4.605_17).abs() < 1e-5);
        let skewed = vec![0.25f64, 0.75];
        assert!((cross_entropy(&skewed, 1).unwrap() - 0.287_682_072_451_780_9).abs() < 1e-12);
        assert_eq!(cross_entropy(&[0.0f64, 1.0], 1).unwrap(), 0.0);
        // Clamp keeps the loss finite at exactly -ln(1e-12).
        let clamped = cross_entropy(&[1.0f64, 0.0], 1).unwrap();
        assert!((clamped - (-1e-12f64.ln())).abs() < 1e-9);
        assert!(matches!(
            cross_entropy(&[1.0f64], 1),
            Err(TrainerError::LabelOutOfRange {
                label: 1,
                num_classes: 1
            })
        ));
    }

    #[test]
    fn argmax_takes_the_first_maximum() {
        assert_eq!(argmax(&[0.1f64, 0.7, 0.7, 0.2]), 1);
        assert_eq!(argmax(&[3.0f32]), 0);
        assert_eq!(argmax(&[-1.0f64, -0.5, -2.0]), 1);
    }

    #[test]
    fn select_best_is_argmax_with_earliest_tie() {
        assert_eq!(select_best(&[0.5, 0.7, 0.7, 0.6, 0.6]), 2);
        assert_eq!(select_best(&[0.9]), 1);
        assert_eq!(select_best(&[0.1, 0.1, 0.1]), 1);
    }

    #[test]
    fn derive_seed_separates_streams_and_indices() {
        let a = derive_seed(42, SHUFFLE_STREAM, 0);
        assert_eq!(a, derive_seed(42, SHUFFLE_STREAM, 0));
        assert_ne!(a, derive_seed(42, DROPOUT_STREAM, 0));
        assert_ne!(a, derive_seed(42, SHUFFLE_STREAM, 1));
        assert_ne!(a, derive_seed(43, SHUFFLE_STREAM, 0));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::frozen_head(1).validate().is_ok());
        let mut c = TrainConfig::frozen_head(1);
        c.epochs = 0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::frozen_head(1);
        c.learning_rate = 0.0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::full_fine_tune(1);
        c.feature_cache = true;
        assert!(c.validate().is_err());
    }

    #[test]
    fn null_learning_rate_step_leaves_parameters_unchanged() {
        let enc = tiny_encoder();
        let splits = keyword_splits(3, 2, enc.max_len);
        let mut params = init_parameters::<f32>(&enc, 5).unwrap();
        params.set_train_mode(TrainMode::FrozenHead);
        let mut opt = OptimizerState::new(&params);
        let config = TrainConfig {
            batch_size: 6,
            ..TrainConfig::frozen_head(9)
        };
        // A few real steps first so moments and parameters are non-trivial.
        for epoch in 0..3 {
            train_epoch(
                &mut params,
                &mut opt,
                EpochData::Full(&splits.train),
                &config,
                &enc,
                epoch,
            )
            .unwrap();
        }
        let before: Vec<Vec<f32>> = params.iter().map(|p| p.tensor.data().to_vec()).collect();
        // A learning rate this small underflows to a zero update in f32.
        let null_config = TrainConfig {
            learning_rate: 1e-300,
            ..config.clone()
        };
        let loss = train_epoch(
            &mut params,
            &mut opt,
            EpochData::Full(&splits.train),
            &null_config,
            &enc,
            3,
        )
        .unwrap();
        let after: Vec<Vec<f32>> = params.iter().map(|p| p.tensor.data().to_vec()).collect();
        assert_eq!(before, after, "null step must not move any parameter");
        // With a single batch and no update, the reported mean loss equals
        // the loss at the incoming parameters, replayed here by hand with the
        // same shuffle and dropout seeds.
        let n = splits.train.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
            9,
            SHUFFLE_STREAM,
            3,
        )));
        let mut manual = 0.0;
        for (pos, &idx) in order.iter().enumerate() {
            let dropout_seed = derive_seed(9, DROPOUT_STREAM, 3 * n as u64 + pos as u64);
            let trace = forward_traced(
                &params,
                &enc,
                &splits.train[idx].tokens,
                Mode::Train { dropout_seed },
            )
            .unwrap();
            let probs = softmax(&trace.logits);
            manual += cross_entropy(&probs, splits.train[idx].label).unwrap();
        }
        manual /= n as f64;
        assert_eq!(
            loss, manual,
            "null-step loss must equal the pre-update loss"
        );
    }

    #[test]
    fn frozen_mode_conserves_backbone_bits() {
        let enc = tiny_encoder();
        let splits = keyword_splits(3, 3, enc.max_len);
        let mut params = init_parameters::<f32>(&enc, 12).unwrap();
        params.set_train_mode(TrainMode::FrozenHead);
        let before: Vec<(String, Vec<f32>)> = params
            .iter()
            .filter(|p| !p.trainable)
            .map(|p| (p.name.clone(), p.tensor.data().to_vec()))
            .collect();
        let mut opt = OptimizerState::new(&params);
        let config = TrainConfig::frozen_head(3);
        for epoch in 0..4 {
            train_epoch(
                &mut params,
                &mut opt,
                EpochData::Full(&splits.train),
                &config,
                &enc,
                epoch,
            )
            .unwrap();
        }
        for (name, data) in before {
            assert_eq!(
                params.get(&name).data(),
                data.as_slice(),
                "backbone tensor {name} moved"
            );
        }
    }

    #[test]
    fn repeated_steps_on_one_example_reduce_loss() {
        let enc = tiny_encoder();
        let example = Example {
            tokens: keyword_sequence(1, enc.max_len),
            label: 1,
        };
        let train = vec![example];
        let mut params = init_parameters::<f32>(&enc, 7).unwrap();
        params.set_train_mode(TrainMode::FrozenHead);
        let mut opt = OptimizerState::new(&params);
        // Pooled features at H=8 are small (tanh of 0.02-scale projections),
        // so a single-example fit needs a step size well above the default.
        let config = TrainConfig {
            learning_rate: 0.02,
            ..TrainConfig::frozen_head(11)
        };
        let mut first = None;
        let mut last = 0.0;
        for epoch in 0..200 {
            last = train_epoch(
                &mut params,
                &mut opt,
                EpochData::Full(&train),
                &config,
                &enc,
                epoch,
            )
            .unwrap();
            first.get_or_insert(last);
        }
        assert!(
            last < first.unwrap(),
            "loss failed to decrease: {} -> {last}",
            first.unwrap()
        );
        assert!(
            last < 0.1,
            "200 steps on one example should fit it, got {last}"
        );
    }

    #[test]
    fn empty_corpus_is_rejected() {
        let enc = tiny_encoder();
        let mut params = init_parameters::<f32>(&enc, 1).unwrap();
        let mut opt = OptimizerState::new(&params);
        let config = TrainConfig::frozen_head(1);
        assert!(matches!(
            train_epoch(
                &mut params,
                &mut opt,
                EpochData::Full(&[]),
                &config,
                &enc,
                0
            ),
            Err(TrainerError::EmptyCorpus)
        ));
    }

    #[test]
    fn fit_is_deterministic_for_a_seed() {
        let enc = tiny_encoder();
        let splits = keyword_splits(3, 3, enc.max_len);
        let config = TrainConfig {
            epochs: 3,
            batch_size: 4,
            ..TrainConfig::frozen_head(77)
        };
        let run = || {
            let params = init_parameters::<f32>(&enc, 50).unwrap();
            fit(&splits, params, &config, &enc).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.best_epoch, b.best_epoch);
        for (pa, pb) in a.params.iter().zip(b.params.iter()) {
            assert_eq!(pa.tensor.data(), pb.tensor.data(), "{} differs", pa.name);
        }
        for (la, lb) in a.logs.iter().zip(&b.logs) {
            assert_eq!(la.train_loss, lb.train_loss);
            assert_eq!(la.val_micro_f1, lb.val_micro_f1);
            assert_eq!(la.val_macro_f1, lb.val_macro_f1);
        }
    }

    #[test]
    fn fit_cached_matches_fit_bit_for_bit() {
        let enc = tiny_encoder();
        let splits = keyword_splits(3, 4, enc.max_len);
        let config = TrainConfig {
            epochs: 3,
            batch_size: 5,
            ..TrainConfig::frozen_head(21)
        };
        let full = fit(
            &splits,
            init_parameters::<f32>(&enc, 33).unwrap(),
            &config,
            &enc,
        )
        .unwrap();
        let cached = fit_cached(
            &splits,
            init_parameters::<f32>(&enc, 33).unwrap(),
            &config,
            &enc,
        )
        .unwrap();
        assert_eq!(
            full.params.get("head.weight").data(),
            cached.params.get("head.weight").data()
        );
        assert_eq!(
            full.params.get("head.bias").data(),
            cached.params.get("head.bias").data()
        );
        assert_eq!(full.best_epoch, cached.best_epoch);
        for (a, b) in full.logs.iter().zip(&cached.logs) {
            assert_eq!(a.train_loss, b.train_loss);
            assert_eq!(a.val_micro_f1, b.val_micro_f1);
            assert_eq!(a.val_macro_f1, b.val_macro_f1);
        }
        // Epochs beyond the first perform zero encoder forward passes.
        assert_eq!(cached.encoder_forwards_per_epoch.len(), 3);
        assert!(cached.encoder_forwards_per_epoch[1] == 0);
        assert!(cached.encoder_forwards_per_epoch[2] == 0);
        assert_eq!(
            cached.encoder_forwards_per_epoch[0],
            (splits.train.len() + splits.validation.len()) as u64
        );
    }

    #[test]
    fn fit_cached_rejects_full_fine_tune() {
        let enc = tiny_encoder();
        let splits = keyword_splits(3, 1, enc.max_len);
        let params = init_parameters::<f32>(&enc, 1).unwrap();
        let config = TrainConfig::full_fine_tune(1);
        assert!(matches!(
            fit_cached(&splits, params, &config, &enc),
            Err(TrainerError::CacheRequiresFrozenHead)
        ));
    }

    #[test]
    fn cache_occupies_exactly_n_times_hidden_floats() {
        let enc = EncoderConfig {
            max_len: 6,
            num_classes: 10,
            ..EncoderConfig::new(1, 64, 4, 64, 16)
        };
        let params = init_parameters::<f32>(&enc, 2).unwrap();
        let examples: Vec<Example> = (0..200)
            .map(|i| Example {
                tokens: keyword_sequence(i % 10, enc.max_len),
                label: i % 10,
            })
            .collect();
        let seqs: Vec<TokenSequence> = examples.iter().map(|e| e.tokens.clone()).collect();
        let features = crate::encoder::extract_features_batch(&params, &enc, &seqs).unwrap();
        assert_eq!(features.len(), 200 * 64);
        assert_eq!(features.shape(), &[200, 64]);
    }

    #[test]
    fn checkpoint_round_trip_with_optimizer_state() {
        let enc = tiny_encoder();
        let splits = keyword_splits(3, 2, enc.max_len);
        let mut params = init_parameters::<f32>(&enc, 61).unwrap();
        params.set_train_mode(TrainMode::FrozenHead);
        let mut opt = OptimizerState::new(&params);
        let config = TrainConfig::frozen_head(61);
        train_epoch(
            &mut params,
            &mut opt,
            EpochData::Full(&splits.train),
            &config,
            &enc,
            0,
        )
        .unwrap();
        assert!(opt.step() > 0);

        let dir = tempdir().unwrap();
        let path = dir.path().join("model.lpb");
        save_checkpoint(&params, Some(&opt), &path).unwrap();
        let (loaded_params, loaded_opt) = load_checkpoint(&path, &enc).unwrap();
        let loaded_opt = loaded_opt.expect("optimizer state present");
        assert_eq!(loaded_opt.step(), opt.step());
        for (a, b) in params.iter().zip(loaded_params.iter()) {
            assert_eq!(a.tensor.data(), b.tensor.data());
        }
        for pair in &opt.moments {
            let loaded_pair = loaded_opt.pair(&pair.name).expect("moment present");
            assert_eq!(pair.m.data(), loaded_pair.m.data());
            assert_eq!(pair.v.data(), loaded_pair.v.data());
        }

        // Save -> load -> save is byte-identical.
        let path2 = dir.path().join("model2.lpb");
        save_checkpoint(&loaded_params, Some(&loaded_opt), &path2).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );

        // Without optimizer state the adam entries vanish.
        let path3 = dir.path().join("bare.lpb");
        save_checkpoint(&params, None, &path3).unwrap();
        let (_, no_opt) = load_checkpoint(&path3, &enc).unwrap();
        assert!(no_opt.is_none());
    }

    #[test]
    fn checkpoint_shape_mismatch_names_tensor_and_shapes() {
        let small = EncoderConfig {
            max_len: 6,
            num_classes: 3,
            ..EncoderConfig::new(1, 8, 2, 16, 16)
        };
        let big = EncoderConfig {
            max_len: 6,
            num_classes: 3,
            ..EncoderConfig::new(1, 16, 2, 16, 16)
        };
        let params = init_parameters::<f32>(&small, 1).unwrap();
        let dir = tempdir().unwrap();
        let path = dir.path().join("small.lpb");
        save_checkpoint(&params, None, &path).unwrap();
        let err = load_checkpoint(&path, &big).unwrap_err();
        let message = err.to_string();
        assert!(message.contains("embeddings.token"), "got: {message}");
        assert!(message.contains("16"), "got: {message}");
        assert!(message.contains("8"), "got: {message}");
    }

    #[test]
    fn resumed_optimizer_continues_identically() {
        let enc = tiny_encoder();
        let splits = keyword_splits(3, 2, enc.max_len);
        let config = TrainConfig::frozen_head(8);

        // Uninterrupted: two epochs straight through.
        let mut p_straight = init_parameters::<f32>(&enc, 90).unwrap();
        p_straight.set_train_mode(TrainMode::FrozenHead);
        let mut o_straight = OptimizerState::new(&p_straight);
        for epoch in 0..2 {
            train_epoch(
                &mut p_straight,
                &mut o_straight,
                EpochData::Full(&splits.train),
                &config,
                &enc,
                epoch,
            )
            .unwrap();
        }

        // Interrupted: one epoch, checkpoint, reload, second epoch.
        let mut p_resumed = init_parameters::<f32>(&enc, 90).unwrap();
        p_resumed.set_train_mode(TrainMode::FrozenHead);
        let mut o_resumed = OptimizerState::new(&p_resumed);
        train_epoch(
            &mut p_resumed,
            &mut o_resumed,
            EpochData::Full(&splits.train),
            &config,
            &enc,
            0,
        )
        .unwrap();
        let dir = tempdir().unwrap();
        let path = dir.path().join("mid.lpb");
        save_checkpoint(&p_resumed, Some(&o_resumed), &path).unwrap();
        let (mut p_loaded, o_loaded) = load_checkpoint(&path, &enc).unwrap();
        let mut o_loaded = o_loaded.unwrap();
        p_loaded.set_train_mode(TrainMode::FrozenHead);
        train_epoch(
            &mut p_loaded,
            &mut o_loaded,
            EpochData::Full(&splits.train),
            &config,
            &enc,
            1,
        )
        .unwrap();

        assert_eq!(
            p_straight.get("head.weight").data(),
            p_loaded.get("head.weight").data()
        );
        assert_eq!(
            p_straight.get("head.bias").data(),
            p_loaded.get("head.bias").data()
        );
    }

    #[test]
    fn epoch_log_csv_renders_fixed_precision() {
        let logs = vec![
            EpochLog {
                epoch: 1,
                train_loss: 1.234_567_89,
                val_micro_f1: 0.5,
                val_macro_f1: 0.25,
                seconds: 1.5,
            },
            EpochLog {
                epoch: 2,
                train_loss: 0.9,
                val_micro_f1: 0.75,
                val_macro_f1: 0.5,
                seconds: 2.25,
            },
        ];
        let rendered = epoch_log_csv(&logs, false);
        assert_eq!(
            rendered,
            "epoch,train_loss,val_micro_f1,val_macro_f1,seconds\n\
             1,1.234568,0.500000,0.250000,1.500\n\
             2,0.900000,0.750000,0.500000,2.250\n"
        );
        let zeroed = epoch_log_csv(&logs, true);
        assert!(zeroed.contains("1,1.234568,0.500000,0.250000,0.000\n"));
        assert!(zeroed.contains("2,0.900000,0.750000,0.500000,0.000\n"));
    }

    #[test]
    fn selection_returns_params_reproducing_best_score() {
        let enc = tiny_encoder();
        let splits = keyword_splits(3, 3, enc.max_len);
        let config = TrainConfig {
            epochs: 4,
            ..TrainConfig::frozen_head(5)
        };
        let result = fit(
            &splits,
            init_parameters::<f32>(&enc, 70).unwrap(),
            &config,
            &enc,
        )
        .unwrap();
        let best_logged = result.logs[result.best_epoch - 1].val_micro_f1;
        let re_evaluated = evaluate(&result.params, &enc, &splits.validation).unwrap();
        assert_eq!(re_evaluated.micro_f1, best_logged);
        let max_logged = result
            .logs
            .iter()
            .map(|l| l.val_micro_f1)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(best_logged, max_logged);
        // Earliest epoch wins ties.
        let scores: Vec<f64> = result.logs.iter().map(|l| l.val_micro_f1).collect();
        assert_eq!(select_best(&scores), result.best_epoch);
    }
}
