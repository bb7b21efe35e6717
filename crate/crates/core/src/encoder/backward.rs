//! Reverse-mode gradients for the encoder, replayed from a [`ForwardTrace`].
//!
//! Frozen-head mode produces gradients for the classification head alone;
//! full fine-tuning continues through the pooler, every attention layer, and
//! the embeddings. All arithmetic mirrors the forward pass exactly, so
//! positions skipped by the attention mask receive gradients of exactly zero.

use std::collections::HashMap;

use super::forward::{gelu_derivative, softmax, ForwardTrace, LnTrace};
use super::{EncoderConfig, EncoderError, Mode, ParameterSet, TrainMode};
use crate::tensor::{matmul_nt, matmul_tn, matvec, Scalar, Tensor};

/// Named gradient tensors in canonical parameter order.
#[derive(Debug, Clone)]
pub struct GradientSet<T> {
    grads: Vec<(String, Tensor<T>)>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> GradientSet<T> {
    fn from_entries(grads: Vec<(String, Tensor<T>)>) -> Self {
        let index = grads
            .iter()
            .enumerate()
            .map(|(i, (n, _))| (n.clone(), i))
            .collect();
        GradientSet { grads, index }
    }

    /// Head-only gradients in canonical order, matching what [`backward`]
    /// returns in frozen-head mode.
    pub fn from_head(d_weight: Tensor<T>, d_bias: Tensor<T>) -> Self {
        GradientSet::from_entries(vec![
            ("head.weight".to_string(), d_weight),
            ("head.bias".to_string(), d_bias),
        ])
    }

    /// Zero gradients shaped for every tensor the mode trains.
    pub fn zeros(config: &EncoderConfig, mode: TrainMode) -> Self {
        let entries = config
            .tensor_layout()
            .into_iter()
            .filter(|(name, _)| match mode {
                TrainMode::FrozenHead => name == "head.weight" || name == "head.bias",
                TrainMode::FullFineTune => true,
            })
            .map(|(name, shape)| (name, Tensor::zeros(&shape)))
            .collect();
        GradientSet::from_entries(entries)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.grads[i].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.grads.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Element-wise accumulation; the two sets must hold the same tensors.
    pub fn accumulate(&mut self, other: &GradientSet<T>) {
        assert_eq!(self.grads.len(), other.grads.len(), "gradient set mismatch");
        for ((name_a, a), (name_b, b)) in self.grads.iter_mut().zip(&other.grads) {
            assert_eq!(name_a, name_b, "gradient set order mismatch");
            for (x, &y) in a.data_mut().iter_mut().zip(b.data()) {
                *x = *x + y;
            }
        }
    }

    pub fn scale(&mut self, factor: T) {
        for (_, t) in &mut self.grads {
            for x in t.data_mut() {
                *x = *x * factor;
            }
        }
    }
}

/// Gradient of cross-entropy-with-softmax loss with respect to the logits:
/// `softmax(logits) - onehot(gold)`.
pub fn logit_gradient<T: Scalar>(logits: &[T], gold: usize) -> Vec<T> {
    let mut dz = softmax(logits);
    dz[gold] = dz[gold] - T::one();
    dz
}

/// Head gradients from the post-dropout pooled vector and the logit gradient:
/// the weight gradient is their outer product, the bias gradient is the logit
/// gradient itself. Shared by full training and cached-feature training so
/// both run identical arithmetic.
pub fn head_gradients<T: Scalar>(pooled_dropped: &[T], d_logits: &[T]) -> (Tensor<T>, Tensor<T>) {
    let (h, c) = (pooled_dropped.len(), d_logits.len());
    let mut d_weight = Tensor::zeros(&[h, c]);
    for (i, &p) in pooled_dropped.iter().enumerate() {
        let row = d_weight.row_mut(i);
        for (j, &dz) in d_logits.iter().enumerate() {
            row[j] = p * dz;
        }
    }
    (d_weight, Tensor::from_vec(&[c], d_logits.to_vec()))
}

fn col_sums<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (rows, cols) = (x.shape()[0], x.shape()[1]);
    let mut out = vec![T::zero(); cols];
    for r in 0..rows {
        for (acc, &v) in out.iter_mut().zip(x.row(r)) {
            *acc = *acc + v;
        }
    }
    Tensor::from_vec(&[cols], out)
}

/// Layer-norm backward over rows. Returns `(d_input, d_scale, d_shift)`.
fn ln_backward<T: Scalar>(
    dy: &Tensor<T>,
    ln: &LnTrace<T>,
    gamma: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (rows, cols) = (dy.shape()[0], dy.shape()[1]);
    let n = T::from_f64(cols as f64);
    let mut dx = Tensor::zeros(&[rows, cols]);
    let mut d_scale = vec![T::zero(); cols];
    let mut d_shift = vec![T::zero(); cols];
    let mut dxhat = vec![T::zero(); cols];
    for r in 0..rows {
        let dy_r = dy.row(r);
        let xhat_r = ln.xhat.row(r);
        for c in 0..cols {
            d_shift[c] = d_shift[c] + dy_r[c];
            d_scale[c] = d_scale[c] + dy_r[c] * xhat_r[c];
            dxhat[c] = dy_r[c] * gamma.data()[c];
        }
        let mut m1 = T::zero();
        let mut m2 = T::zero();
        for c in 0..cols {
            m1 = m1 + dxhat[c];
            m2 = m2 + dxhat[c] * xhat_r[c];
        }
        m1 = m1 / n;
        m2 = m2 / n;
        let inv = ln.inv_sigma[r];
        let dx_r = dx.row_mut(r);
        for c in 0..cols {
            dx_r[c] = inv * (dxhat[c] - m1 - xhat_r[c] * m2);
        }
    }
    (
        dx,
        Tensor::from_vec(&[cols], d_scale),
        Tensor::from_vec(&[cols], d_shift),
    )
}

/// Full gradient of the cross-entropy loss for one traced example. The trace
/// must come from a train-mode forward pass; frozen-head mode yields head
/// gradients only, full fine-tuning yields gradients for every tensor.
pub fn backward<T: Scalar>(
    params: &ParameterSet<T>,
    config: &EncoderConfig,
    trace: &ForwardTrace<T>,
    gold: usize,
    mode: TrainMode,
) -> Result<GradientSet<T>, EncoderError> {
    if matches!(trace.mode, Mode::Eval) {
        return Err(EncoderError::EvalTrace);
    }
    if gold >= config.num_classes {
        return Err(EncoderError::LabelOutOfRange {
            label: gold,
            num_classes: config.num_classes,
        });
    }

    let dz = logit_gradient(&trace.logits, gold);
    let (d_head_w, d_head_b) = head_gradients(&trace.pooled_dropped, &dz);
    if mode == TrainMode::FrozenHead {
        return Ok(GradientSet::from_entries(vec![
            ("head.weight".to_string(), d_head_w),
            ("head.bias".to_string(), d_head_b),
        ]));
    }

    let len = config.max_len;
    let h = config.hidden;
    let mut grads: HashMap<String, Tensor<T>> = HashMap::new();
    grads.insert("head.weight".to_string(), d_head_w);
    grads.insert("head.bias".to_string(), d_head_b);

    // Head input and dropout.
    let d_pd = matvec(params.get("head.weight"), &dz);
    let d_pooled: Vec<T> = d_pd
        .iter()
        .zip(&trace.dropout_mask)
        .map(|(&g, &m)| g * m)
        .collect();
    // Pooler tanh.
    let d_pre_pool: Vec<T> = d_pooled
        .iter()
        .zip(&trace.pooled)
        .map(|(&g, &p)| g * (T::one() - p * p))
        .collect();
    let mut d_pooler_w = Tensor::zeros(&[h, h]);
    for (i, &hc) in trace.h_cls.iter().enumerate() {
        let row = d_pooler_w.row_mut(i);
        for (j, &g) in d_pre_pool.iter().enumerate() {
            row[j] = hc * g;
        }
    }
    grads.insert("pooler.weight".to_string(), d_pooler_w);
    grads.insert(
        "pooler.bias".to_string(),
        Tensor::from_vec(&[h], d_pre_pool.clone()),
    );
    let d_h_cls = matvec(params.get("pooler.weight"), &d_pre_pool);

    // Only the [CLS] row feeds the pooler.
    let mut d_hidden = Tensor::zeros(&[len, h]);
    d_hidden.row_mut(0).copy_from_slice(&d_h_cls);

    let unmasked: Vec<usize> = (0..len).filter(|&j| trace.mask[j] != 0).collect();
    let heads = config.num_heads;
    let d_head_dim = config.head_dim();
    let scale = T::from_f64(1.0 / (d_head_dim as f64).sqrt());

    for layer_idx in (0..config.num_layers).rev() {
        let layer = &trace.layers[layer_idx];
        let name = |suffix: &str| format!("layer{layer_idx}.{suffix}");

        // Feed-forward layer norm.
        let (d_r2, d_ffn_ln_scale, d_ffn_ln_shift) = ln_backward(
            &d_hidden,
            &layer.ffn_ln,
            params.get(&name("ffn.layer_norm.scale")),
        );
        grads.insert(name("ffn.layer_norm.scale"), d_ffn_ln_scale);
        grads.insert(name("ffn.layer_norm.shift"), d_ffn_ln_shift);

        // Residual: r2 = attn_ln.output + ffn_out.
        let mut d_post_attn = d_r2.clone();
        let d_ffn_out = d_r2;

        // ffn_out = gelu(ffn_pre) . W2 + b2.
        let w2 = params.get(&name("ffn.output.weight"));
        grads.insert(
            name("ffn.output.weight"),
            matmul_tn(&layer.ffn_act, &d_ffn_out),
        );
        grads.insert(name("ffn.output.bias"), col_sums(&d_ffn_out));
        let d_act = matmul_nt(&d_ffn_out, w2);
        let mut d_pre = d_act;
        for (g, &x) in d_pre.data_mut().iter_mut().zip(layer.ffn_pre.data()) {
            *g = *g * gelu_derivative(x);
        }

        // ffn_pre = attn_ln.output . W1 + b1.
        let w1 = params.get(&name("ffn.inner.weight"));
        grads.insert(
            name("ffn.inner.weight"),
            matmul_tn(&layer.attn_ln.output, &d_pre),
        );
        grads.insert(name("ffn.inner.bias"), col_sums(&d_pre));
        let d_from_ffn = matmul_nt(&d_pre, w1);
        crate::tensor::add_assign(&mut d_post_attn, &d_from_ffn);

        // Attention layer norm.
        let (d_r1, d_attn_ln_scale, d_attn_ln_shift) = ln_backward(
            &d_post_attn,
            &layer.attn_ln,
            params.get(&name("attention.layer_norm.scale")),
        );
        grads.insert(name("attention.layer_norm.scale"), d_attn_ln_scale);
        grads.insert(name("attention.layer_norm.shift"), d_attn_ln_shift);

        // Residual: r1 = input + attn_out.
        let mut d_input = d_r1.clone();
        let d_attn_out = d_r1;

        // attn_out = context . Wo + bo.
        let wo = params.get(&name("attention.output.weight"));
        grads.insert(
            name("attention.output.weight"),
            matmul_tn(&layer.context, &d_attn_out),
        );
        grads.insert(name("attention.output.bias"), col_sums(&d_attn_out));
        let d_context = matmul_nt(&d_attn_out, wo);

        // Per-head attention backward over unmasked keys only.
        let mut d_q = Tensor::zeros(&[len, h]);
        let mut d_k = Tensor::zeros(&[len, h]);
        let mut d_v = Tensor::zeros(&[len, h]);
        for head in 0..heads {
            let off = head * d_head_dim;
            let probs = &layer.probs[head];
            for i in 0..len {
                let d_ctx_i = &d_context.row(i)[off..off + d_head_dim];
                let mut dp = vec![T::zero(); unmasked.len()];
                for (jj, &j) in unmasked.iter().enumerate() {
                    let v_j = &layer.v.row(j)[off..off + d_head_dim];
                    let mut s = T::zero();
                    for t in 0..d_head_dim {
                        s = s + d_ctx_i[t] * v_j[t];
                    }
                    dp[jj] = s;
                }
                let mut dot = T::zero();
                for (jj, &j) in unmasked.iter().enumerate() {
                    dot = dot + dp[jj] * probs.at2(i, j);
                }
                for (jj, &j) in unmasked.iter().enumerate() {
                    let p_ij = probs.at2(i, j);
                    let ds = p_ij * (dp[jj] - dot);
                    for (t, &d_ctx_it) in d_ctx_i.iter().enumerate() {
                        let q_it = layer.q.at2(i, off + t);
                        let k_jt = layer.k.at2(j, off + t);
                        d_q.set2(i, off + t, d_q.at2(i, off + t) + scale * ds * k_jt);
                        d_k.set2(j, off + t, d_k.at2(j, off + t) + scale * ds * q_it);
                        d_v.set2(j, off + t, d_v.at2(j, off + t) + p_ij * d_ctx_it);
                    }
                }
            }
        }

        // Q/K/V linear projections back to the layer input.
        for (proj, d_proj) in [("query", &d_q), ("key", &d_k), ("value", &d_v)] {
            let w = params.get(&name(&format!("attention.{proj}.weight")));
            grads.insert(
                name(&format!("attention.{proj}.weight")),
                matmul_tn(&layer.input, d_proj),
            );
            grads.insert(name(&format!("attention.{proj}.bias")), col_sums(d_proj));
            let d_from_proj = matmul_nt(d_proj, w);
            crate::tensor::add_assign(&mut d_input, &d_from_proj);
        }

        d_hidden = d_input;
    }

    // Embedding layer norm, then scatter into the three embedding tables.
    let (d_embedded, d_emb_ln_scale, d_emb_ln_shift) = ln_backward(
        &d_hidden,
        &trace.emb_ln,
        params.get("embeddings.layer_norm.scale"),
    );
    grads.insert("embeddings.layer_norm.scale".to_string(), d_emb_ln_scale);
    grads.insert("embeddings.layer_norm.shift".to_string(), d_emb_ln_shift);

    let mut d_token = Tensor::zeros(&[config.vocab_size, h]);
    let mut d_position = Tensor::zeros(&[config.max_len, h]);
    let mut d_segment = Tensor::zeros(&[2, h]);
    for pos in 0..len {
        let src = d_embedded.row(pos);
        let tok = d_token.row_mut(trace.ids[pos] as usize);
        for c in 0..h {
            tok[c] = tok[c] + src[c];
        }
        let p_row = d_position.row_mut(pos);
        for c in 0..h {
            p_row[c] = p_row[c] + src[c];
        }
        let seg = d_segment.row_mut(trace.type_ids[pos] as usize);
        for c in 0..h {
            seg[c] = seg[c] + src[c];
        }
    }
    grads.insert("embeddings.token".to_string(), d_token);
    grads.insert("embeddings.position".to_string(), d_position);
    grads.insert("embeddings.segment".to_string(), d_segment);

    let ordered = config
        .tensor_layout()
        .into_iter()
        .map(|(tensor_name, _)| {
            let g = grads
                .remove(&tensor_name)
                .expect("gradient for every tensor");
            (tensor_name, g)
        })
        .collect();
    Ok(GradientSet::from_entries(ordered))
}
