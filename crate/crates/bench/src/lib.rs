//! Shared fixtures for the criterion benchmarks.

use lexclass_core::encoder::{init_parameters, EncoderConfig, ParameterSet};
use lexclass_core::tokenizer::TokenSequence;

/// Encoder sized to run a forward pass in well under a millisecond.
pub fn bench_encoder_config() -> EncoderConfig {
    EncoderConfig {
        max_len: 64,
        num_classes: 100,
        ..EncoderConfig::new(2, 64, 4, 256, 1000)
    }
}

pub fn bench_parameters(config: &EncoderConfig) -> ParameterSet<f32> {
    init_parameters(config, 42).expect("valid config")
}

/// A fully populated sequence: [CLS], a run of mid-vocabulary ids, [SEP].
pub fn bench_sequence(config: &EncoderConfig) -> TokenSequence {
    let len = config.max_len;
    let mut ids = vec![0u32; len];
    ids[0] = 2;
    for (i, id) in ids.iter_mut().enumerate().take(len - 1).skip(1) {
        *id = 4 + (i as u32 % 900);
    }
    ids[len - 1] = 3;
    TokenSequence {
        ids,
        mask: vec![1; len],
        type_ids: vec![0; len],
        true_length: len,
    }
}

/// A paragraph of clause-like text for text-pipeline benchmarks.
pub fn bench_text() -> String {
    let sentence = "The Tenant shall pay the Base Rent of $12,500.00 per month, \
                    without notice, demand, offset or deduction, on the first day \
                    of each calendar month during the Term; ";
    sentence.repeat(8)
}
