//! Criterion benchmarks for the hot paths: text normalization, WordPiece
//! encoding, encoder forward passes in both modes, feature extraction, and
//! confusion-matrix metrics.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lexclass_bench::{bench_encoder_config, bench_parameters, bench_sequence, bench_text};
use lexclass_core::encoder::{backward, forward, forward_traced, Mode, TrainMode};
use lexclass_core::metrics::{confusion, macro_f1, micro_f1};
use lexclass_core::textprep::{normalize, remove_stopwords, StopwordList};
use lexclass_core::tokenizer::{encode, WordPieceVocab};

fn textprep_benches(c: &mut Criterion) {
    let text = bench_text();
    let stopwords = StopwordList::bundled();
    c.bench_function("normalize_paragraph", |b| {
        b.iter(|| normalize(std::hint::black_box(&text)))
    });
    let normalized = normalize(&text);
    c.bench_function("remove_stopwords_paragraph", |b| {
        b.iter(|| remove_stopwords(std::hint::black_box(&normalized), &stopwords))
    });
}

fn tokenizer_benches(c: &mut Criterion) {
    let mut vocab_text = String::from("[PAD]\n[UNK]\n[CLS]\n[SEP]\n");
    for word in [
        "the",
        "tenant",
        "shall",
        "pay",
        "base",
        "rent",
        "per",
        "month",
        "without",
        "notice",
        "demand",
        "offset",
        "deduction",
        "first",
        "day",
        "each",
        "calendar",
        "during",
        "term",
        "##s",
        "##ing",
        "##ed",
        "of",
        "on",
        "or",
        "12",
        "500",
        "00",
    ] {
        vocab_text.push_str(word);
        vocab_text.push('\n');
    }
    let vocab = WordPieceVocab::from_text(&vocab_text).expect("valid vocab");
    let text = normalize(&bench_text());
    c.bench_function("wordpiece_encode_128", |b| {
        b.iter(|| encode(std::hint::black_box(&text), &vocab, 128))
    });
}

fn encoder_benches(c: &mut Criterion) {
    let config = bench_encoder_config();
    let params = bench_parameters(&config);
    let seq = bench_sequence(&config);
    c.bench_function("forward_eval_l2_h64_len64", |b| {
        b.iter(|| forward(&params, &config, std::hint::black_box(&seq), Mode::Eval))
    });
    let params64 = params.cast::<f64>();
    c.bench_function("forward_backward_full_l2_h64_len64", |b| {
        b.iter(|| {
            let trace = forward_traced(
                &params64,
                &config,
                std::hint::black_box(&seq),
                Mode::Train { dropout_seed: 7 },
            )
            .expect("forward");
            backward(&params64, &config, &trace, 42, TrainMode::FullFineTune).expect("backward")
        })
    });
}

fn metrics_benches(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let golds: Vec<usize> = (0..10_000).map(|_| rng.gen_range(0..100)).collect();
    let preds: Vec<usize> = (0..10_000).map(|_| rng.gen_range(0..100)).collect();
    c.bench_function("confusion_and_f1_10k_pairs", |b| {
        b.iter_batched(
            || (golds.clone(), preds.clone()),
            |(g, p)| {
                let m = confusion(&g, &p, 100).expect("valid ids");
                (micro_f1(&m).expect("non-empty"), macro_f1(&m))
            },
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(
    benches,
    textprep_benches,
    tokenizer_benches,
    encoder_benches,
    metrics_benches
);
criterion_main!(benches);
