//! Forward pass: embeddings, masked multi-head attention layers, pooler, and
//! the dropout-plus-linear classification head.
//!
//! Attention scores are computed only over unmasked key positions, so padding
//! content never enters any arithmetic that reaches the logits. Every
//! intermediate needed by the backward pass is recorded in a [`ForwardTrace`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EncoderConfig, EncoderError, Mode, ParameterSet};
use crate::tensor::{add_bias_rows, matmul, matvec_t, Scalar, Tensor};
use crate::tokenizer::TokenSequence;

/// Numerically stable softmax with max subtraction. Empty input stays empty.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    if logits.is_empty() {
        return Vec::new();
    }
    let mut max = logits[0];
    for &v in &logits[1..] {
        if v > max {
            max = v;
        }
    }
    let mut out: Vec<T> = logits.iter().map(|&v| (v - max).exp()).collect();
    let mut denom = T::zero();
    for &e in &out {
        denom = denom + e;
    }
    for e in &mut out {
        *e = *e / denom;
    }
    out
}

const GELU_C0: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C1: f64 = 0.044_715;

/// Tanh-form gaussian error linear unit.
pub fn gelu<T: Scalar>(x: T) -> T {
    let c0 = T::from_f64(GELU_C0);
    let c1 = T::from_f64(GELU_C1);
    let u = c0 * (x + c1 * x * x * x);
    T::from_f64(0.5) * x * (T::one() + u.tanh())
}

/// Exact derivative of [`gelu`].
pub fn gelu_derivative<T: Scalar>(x: T) -> T {
    let c0 = T::from_f64(GELU_C0);
    let c1 = T::from_f64(GELU_C1);
    let half = T::from_f64(0.5);
    let u = c0 * (x + c1 * x * x * x);
    let t = u.tanh();
    let du = c0 * (T::one() + T::from_f64(3.0) * c1 * x * x);
    half * (T::one() + t) + half * x * (T::one() - t * t) * du
}

/// Per-row layer normalization record: normalized values and the reciprocal
/// standard deviation of each row, both needed by the backward pass.
#[derive(Debug, Clone)]
pub struct LnTrace<T> {
    pub xhat: Tensor<T>,
    pub inv_sigma: Vec<T>,
    pub output: Tensor<T>,
}

pub(super) fn layer_norm_rows<T: Scalar>(
    x: &Tensor<T>,
    scale: &Tensor<T>,
    shift: &Tensor<T>,
    eps: T,
) -> LnTrace<T> {
    let (rows, cols) = (x.shape()[0], x.shape()[1]);
    let mut xhat = Tensor::zeros(&[rows, cols]);
    let mut output = Tensor::zeros(&[rows, cols]);
    let mut inv_sigma = Vec::with_capacity(rows);
    let n = T::from_f64(cols as f64);
    for r in 0..rows {
        let row = x.row(r);
        let mut mean = T::zero();
        for &v in row {
            mean = mean + v;
        }
        mean = mean / n;
        let mut var = T::zero();
        for &v in row {
            let d = v - mean;
            var = var + d * d;
        }
        var = var / n;
        let inv = T::one() / (var + eps).sqrt();
        inv_sigma.push(inv);
        for (c, &value) in row.iter().enumerate() {
            let h = (value - mean) * inv;
            xhat.set2(r, c, h);
            output.set2(r, c, scale.data()[c] * h + shift.data()[c]);
        }
    }
    LnTrace {
        xhat,
        inv_sigma,
        output,
    }
}

/// Intermediates of one encoder layer.
#[derive(Debug, Clone)]
pub struct LayerTrace<T> {
    /// Input hidden states `[max_len, hidden]`.
    pub input: Tensor<T>,
    pub q: Tensor<T>,
    pub k: Tensor<T>,
    pub v: Tensor<T>,
    /// Attention probabilities per head, each `[max_len, max_len]`; entries at
    /// masked key columns are exactly zero.
    pub probs: Vec<Tensor<T>>,
    /// Concatenated per-head context vectors before the output projection.
    pub context: Tensor<T>,
    pub attn_ln: LnTrace<T>,
    /// Feed-forward pre-activation `[max_len, ff_dim]`.
    pub ffn_pre: Tensor<T>,
    /// Activation output `gelu(ffn_pre)`.
    pub ffn_act: Tensor<T>,
    pub ffn_ln: LnTrace<T>,
}

impl<T: Scalar> LayerTrace<T> {
    /// Hidden states produced by this layer.
    pub fn output(&self) -> &Tensor<T> {
        &self.ffn_ln.output
    }
}

/// One full encoder layer: masked multi-head self-attention, then the
/// feed-forward sublayer, each with a residual connection and layer norm.
pub fn attention_layer<T: Scalar>(
    input: &Tensor<T>,
    mask: &[u8],
    params: &ParameterSet<T>,
    layer: usize,
    config: &EncoderConfig,
) -> LayerTrace<T> {
    let len = input.shape()[0];
    let h = config.hidden;
    let heads = config.num_heads;
    let d = config.head_dim();
    let scale = T::from_f64(1.0 / (d as f64).sqrt());

    let project = |name: &str| -> Tensor<T> {
        let mut out = matmul(
            input,
            params.get(&format!("layer{layer}.attention.{name}.weight")),
        );
        add_bias_rows(
            &mut out,
            params.get(&format!("layer{layer}.attention.{name}.bias")),
        );
        out
    };
    let q = project("query");
    let k = project("key");
    let v = project("value");

    let unmasked: Vec<usize> = (0..len).filter(|&j| mask[j] != 0).collect();
    let mut probs: Vec<Tensor<T>> = Vec::with_capacity(heads);
    let mut context = Tensor::zeros(&[len, h]);
    for head in 0..heads {
        let offset = head * d;
        let mut p = Tensor::zeros(&[len, len]);
        for i in 0..len {
            if unmasked.is_empty() {
                continue;
            }
            let qi = &q.row(i)[offset..offset + d];
            let mut scores = Vec::with_capacity(unmasked.len());
            for &j in &unmasked {
                let kj = &k.row(j)[offset..offset + d];
                let mut s = T::zero();
                for t in 0..d {
                    s = s + qi[t] * kj[t];
                }
                scores.push(scale * s);
            }
            let weights = softmax(&scores);
            for (w, &j) in weights.iter().zip(&unmasked) {
                p.set2(i, j, *w);
            }
            let ctx_row = context.row_mut(i);
            for (w, &j) in weights.iter().zip(&unmasked) {
                let vj = &v.row(j)[offset..offset + d];
                for t in 0..d {
                    ctx_row[offset + t] = ctx_row[offset + t] + *w * vj[t];
                }
            }
        }
        probs.push(p);
    }

    let mut attn_out = matmul(
        &context,
        params.get(&format!("layer{layer}.attention.output.weight")),
    );
    add_bias_rows(
        &mut attn_out,
        params.get(&format!("layer{layer}.attention.output.bias")),
    );
    let mut residual = input.clone();
    crate::tensor::add_assign(&mut residual, &attn_out);
    let attn_ln = layer_norm_rows(
        &residual,
        params.get(&format!("layer{layer}.attention.layer_norm.scale")),
        params.get(&format!("layer{layer}.attention.layer_norm.shift")),
        T::from_f64(config.layer_norm_eps),
    );

    let mut ffn_pre = matmul(
        &attn_ln.output,
        params.get(&format!("layer{layer}.ffn.inner.weight")),
    );
    add_bias_rows(
        &mut ffn_pre,
        params.get(&format!("layer{layer}.ffn.inner.bias")),
    );
    let ffn_act = Tensor::from_vec(
        ffn_pre.shape(),
        ffn_pre.data().iter().map(|&x| gelu(x)).collect(),
    );
    let mut ffn_out = matmul(
        &ffn_act,
        params.get(&format!("layer{layer}.ffn.output.weight")),
    );
    add_bias_rows(
        &mut ffn_out,
        params.get(&format!("layer{layer}.ffn.output.bias")),
    );
    let mut residual2 = attn_ln.output.clone();
    crate::tensor::add_assign(&mut residual2, &ffn_out);
    let ffn_ln = layer_norm_rows(
        &residual2,
        params.get(&format!("layer{layer}.ffn.layer_norm.scale")),
        params.get(&format!("layer{layer}.ffn.layer_norm.shift")),
        T::from_f64(config.layer_norm_eps),
    );

    LayerTrace {
        input: input.clone(),
        q,
        k,
        v,
        probs,
        context,
        attn_ln,
        ffn_pre,
        ffn_act,
        ffn_ln,
    }
}

/// Dropout mask over the pooled vector: all ones in eval mode or when the
/// dropout rate is zero; otherwise kept units carry `1 / (1 - rate)` and
/// dropped units carry exactly zero, drawn from a generator seeded by the
/// mode's dropout seed.
fn dropout_mask<T: Scalar>(config: &EncoderConfig, mode: Mode) -> Vec<T> {
    let h = config.hidden;
    match mode {
        Mode::Eval => vec![T::one(); h],
        Mode::Train { dropout_seed } => {
            let p = config.dropout;
            if p == 0.0 {
                return vec![T::one(); h];
            }
            let keep = T::from_f64(1.0 / (1.0 - p));
            let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
            (0..h)
                .map(|_| {
                    let u: f64 = rng.gen();
                    if u >= p {
                        keep
                    } else {
                        T::zero()
                    }
                })
                .collect()
        }
    }
}

/// Final stage shared by the full forward pass and cached-feature training:
/// dropout on the pooled vector, then the linear head. Returns
/// `(dropout_mask, pooled_dropped, logits)`.
pub fn head_stage<T: Scalar>(
    pooled: &[T],
    params: &ParameterSet<T>,
    config: &EncoderConfig,
    mode: Mode,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mask = dropout_mask::<T>(config, mode);
    let dropped: Vec<T> = pooled.iter().zip(&mask).map(|(&x, &m)| x * m).collect();
    let mut logits = matvec_t(params.get("head.weight"), &dropped);
    for (l, &b) in logits.iter_mut().zip(params.get("head.bias").data()) {
        *l = *l + b;
    }
    (mask, dropped, logits)
}

/// Every intermediate of one example's forward pass, sufficient to replay the
/// exact computation backwards.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    pub mode: Mode,
    pub ids: Vec<u32>,
    pub mask: Vec<u8>,
    pub type_ids: Vec<u8>,
    pub emb_ln: LnTrace<T>,
    pub layers: Vec<LayerTrace<T>>,
    /// Final hidden state of the `[CLS]` position.
    pub h_cls: Vec<T>,
    pub pooled: Vec<T>,
    pub dropout_mask: Vec<T>,
    pub pooled_dropped: Vec<T>,
    pub logits: Vec<T>,
}

/// Logits plus, in train mode, the trace required for a backward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput<T> {
    pub logits: Vec<T>,
    pub trace: Option<ForwardTrace<T>>,
}

fn check_sequence(seq: &TokenSequence, config: &EncoderConfig) -> Result<(), EncoderError> {
    if seq.ids.len() != config.max_len {
        return Err(EncoderError::BadSequenceLength {
            expected: config.max_len,
            actual: seq.ids.len(),
        });
    }
    for (position, &id) in seq.ids.iter().enumerate() {
        if id as usize >= config.vocab_size {
            return Err(EncoderError::IdOutOfRange {
                id,
                position,
                vocab_size: config.vocab_size,
            });
        }
    }
    Ok(())
}

/// Runs the full network on one sequence, recording every intermediate.
pub fn forward_traced<T: Scalar>(
    params: &ParameterSet<T>,
    config: &EncoderConfig,
    seq: &TokenSequence,
    mode: Mode,
) -> Result<ForwardTrace<T>, EncoderError> {
    check_sequence(seq, config)?;
    let len = config.max_len;
    let h = config.hidden;

    let token = params.get("embeddings.token");
    let position = params.get("embeddings.position");
    let segment = params.get("embeddings.segment");
    let mut embedded = Tensor::zeros(&[len, h]);
    for pos in 0..len {
        let tok_row = token.row(seq.ids[pos] as usize);
        let pos_row = position.row(pos);
        let seg_row = segment.row(seq.type_ids[pos] as usize);
        let out = embedded.row_mut(pos);
        for c in 0..h {
            out[c] = tok_row[c] + pos_row[c] + seg_row[c];
        }
    }
    let emb_ln = layer_norm_rows(
        &embedded,
        params.get("embeddings.layer_norm.scale"),
        params.get("embeddings.layer_norm.shift"),
        T::from_f64(config.layer_norm_eps),
    );

    let mut layers = Vec::with_capacity(config.num_layers);
    let mut hidden_states = emb_ln.output.clone();
    for layer in 0..config.num_layers {
        let trace = attention_layer(&hidden_states, &seq.mask, params, layer, config);
        hidden_states = trace.output().clone();
        layers.push(trace);
    }

    let h_cls = hidden_states.row(0).to_vec();
    let mut pre_pool = matvec_t(params.get("pooler.weight"), &h_cls);
    for (v, &b) in pre_pool.iter_mut().zip(params.get("pooler.bias").data()) {
        *v = *v + b;
    }
    let pooled: Vec<T> = pre_pool.iter().map(|&v| v.tanh()).collect();

    let (mask_vals, pooled_dropped, logits) = head_stage(&pooled, params, config, mode);

    Ok(ForwardTrace {
        mode,
        ids: seq.ids.clone(),
        mask: seq.mask.clone(),
        type_ids: seq.type_ids.clone(),
        emb_ln,
        layers,
        h_cls,
        pooled,
        dropout_mask: mask_vals,
        pooled_dropped,
        logits,
    })
}

/// Runs the network for its logits. Train mode additionally returns the trace
/// needed to compute gradients; eval mode returns logits alone.
pub fn forward<T: Scalar>(
    params: &ParameterSet<T>,
    config: &EncoderConfig,
    seq: &TokenSequence,
    mode: Mode,
) -> Result<ForwardOutput<T>, EncoderError> {
    let trace = forward_traced(params, config, seq, mode)?;
    let logits = trace.logits.clone();
    let trace = match mode {
        Mode::Train { .. } => Some(trace),
        Mode::Eval => None,
    };
    Ok(ForwardOutput { logits, trace })
}

/// Pooled backbone output for one sequence, computed in eval mode. This is the
/// feature vector that frozen-backbone training caches.
pub fn extract_features<T: Scalar>(
    params: &ParameterSet<T>,
    config: &EncoderConfig,
    seq: &TokenSequence,
) -> Result<Vec<T>, EncoderError> {
    let trace = forward_traced(params, config, seq, Mode::Eval)?;
    Ok(trace.pooled)
}

/// Pooled backbone outputs for a slice of sequences, stacked `[n, hidden]`.
pub fn extract_features_batch<T: Scalar>(
    params: &ParameterSet<T>,
    config: &EncoderConfig,
    seqs: &[TokenSequence],
) -> Result<Tensor<T>, EncoderError> {
    let mut data = Vec::with_capacity(seqs.len() * config.hidden);
    for seq in seqs {
        data.extend(extract_features(params, config, seq)?);
    }
    Ok(Tensor::from_vec(&[seqs.len(), config.hidden], data))
}
