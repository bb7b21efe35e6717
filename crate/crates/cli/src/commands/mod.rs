//! One module per subcommand plus the loading/encoding helpers they share.

pub mod ablate;
pub mod eval;
pub mod predict;
pub mod stats;
pub mod train;
pub mod vocab;

use std::path::Path;

use anyhow::{Context, Result};
use lexclass_core::corpus::{load_corpus, Clause};
use lexclass_core::encoder::{forward, softmax, EncoderConfig, Mode, ParameterSet};
use lexclass_core::textprep::{preprocess, FilterLexicon, FilterMode};
use lexclass_core::tokenizer::{encode, WordPieceVocab};
use lexclass_core::trainer::{argmax, Example};

use crate::config::{require, FilterModeSetting, Resolved};

/// Comment line prepended to every report a label-leaking run touches.
pub const ORACLE_WARNING: &str =
    "# WARNING: oracle filter mode selects each clause's word list by its gold \
     label; results leak label information and are not honest estimates.\n";

pub(crate) fn load_clauses(path: &Path, cfg: &Resolved) -> Result<Vec<Clause>> {
    load_corpus(path, &cfg.taxonomy).with_context(|| format!("loading corpus {}", path.display()))
}

pub(crate) fn load_vocab(cfg: &Resolved) -> Result<WordPieceVocab> {
    let path = require(&cfg.vocab, "--vocab")?;
    WordPieceVocab::load(path)
        .with_context(|| format!("loading WordPiece vocabulary {}", path.display()))
}

/// Stage 3 needs the lexicon before any training or inference starts; stages
/// 1 and 2 ignore it.
pub(crate) fn load_lexicon_if_needed(cfg: &Resolved) -> Result<Option<FilterLexicon>> {
    if !cfg.uses_filter() {
        return Ok(None);
    }
    let path = cfg.lexicon.as_deref().ok_or_else(|| {
        anyhow::anyhow!("stage 3 requires --lexicon; build one with `lexclass vocab`")
    })?;
    let lexicon = lexclass_core::textprep::load_lexicon(path, cfg.taxonomy.num_classes())
        .with_context(|| format!("loading lexicon {}", path.display()))?;
    Ok(Some(lexicon))
}

/// Applies the resolved preprocessing stage and tokenizes. Oracle mode picks
/// each clause's own class list, so the choice happens per clause here.
pub(crate) fn encode_clauses(
    clauses: &[Clause],
    cfg: &Resolved,
    lexicon: Option<&FilterLexicon>,
    vocab: &WordPieceVocab,
) -> Result<Vec<Example>> {
    encode_with_stage(clauses, cfg, cfg.stage, lexicon, vocab)
}

/// Same as [`encode_clauses`] with an explicit stage; the ablation runner
/// sweeps stages while everything else in the config stays put.
pub(crate) fn encode_with_stage(
    clauses: &[Clause],
    cfg: &Resolved,
    stage: lexclass_core::textprep::PipelineStage,
    lexicon: Option<&FilterLexicon>,
    vocab: &WordPieceVocab,
) -> Result<Vec<Example>> {
    clauses
        .iter()
        .map(|clause| {
            let mode = match cfg.filter_mode {
                FilterModeSetting::Union => FilterMode::Union,
                FilterModeSetting::Oracle => FilterMode::Oracle(clause.label),
            };
            let text = preprocess(clause, stage, &cfg.stopwords, lexicon, mode)?;
            Ok(Example {
                tokens: encode(&text, vocab, cfg.max_len),
                label: clause.label,
            })
        })
        .collect()
}

/// Eval-mode forward pass reduced to (predicted class, top probability).
pub(crate) fn predict_one(
    params: &ParameterSet<f32>,
    config: &EncoderConfig,
    tokens: &lexclass_core::tokenizer::TokenSequence,
) -> Result<(usize, f64)> {
    let output = forward(params, config, tokens, Mode::Eval)?;
    let probs = softmax(&output.logits);
    let pred = argmax(&probs);
    Ok((pred, probs[pred] as f64))
}

/// Prefixes the oracle leakage warning when the run uses it.
pub(crate) fn with_leak_warning(cfg: &Resolved, body: String) -> String {
    if cfg.oracle_active() {
        format!("{ORACLE_WARNING}{body}")
    } else {
        body
    }
}

/// One stderr notice per command when preprocessing will leak labels.
pub(crate) fn warn_if_oracle(cfg: &Resolved) {
    if cfg.oracle_active() {
        eprintln!("warning: oracle filter mode leaks gold labels into preprocessing");
    }
}
