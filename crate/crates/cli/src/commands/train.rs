//! Trains the classifier and writes the best-validation-epoch checkpoint,
//! the per-epoch log, and the resolved configuration.

use anyhow::Result;
use lexclass_core::checkpoint;
use lexclass_core::encoder::init_parameters;
use lexclass_core::trainer::{epoch_log_csv, fit, fit_cached, EncodedSplits};

use super::{
    encode_clauses, load_clauses, load_lexicon_if_needed, load_vocab, warn_if_oracle,
    with_leak_warning,
};
use crate::config::{require, Resolved, RESOLVED_NAME};
use crate::outputs::OutputSet;

pub fn run(cfg: &Resolved) -> Result<()> {
    warn_if_oracle(cfg);
    // Configuration problems (missing lexicon, bad dimensions) surface before
    // any corpus pass or training step.
    let vocab = load_vocab(cfg)?;
    let lexicon = load_lexicon_if_needed(cfg)?;
    let encoder_config = cfg.encoder_config(vocab.len())?;
    let train_config = cfg.train_config();
    train_config.validate()?;

    let train = load_clauses(require(&cfg.train_file, "--train-file")?, cfg)?;
    let validation = load_clauses(require(&cfg.validation_file, "--validation-file")?, cfg)?;
    let splits = EncodedSplits {
        train: encode_clauses(&train, cfg, lexicon.as_ref(), &vocab)?,
        validation: encode_clauses(&validation, cfg, lexicon.as_ref(), &vocab)?,
        test: Vec::new(),
    };

    let params = init_parameters::<f32>(&encoder_config, cfg.seed)?;
    let result = if cfg.cache_features {
        fit_cached(&splits, params, &train_config, &encoder_config)?
    } else {
        fit(&splits, params, &train_config, &encoder_config)?
    };

    let mut outputs = OutputSet::new();
    outputs.add(RESOLVED_NAME, cfg.file_string());
    outputs.add(
        "checkpoint.lpb",
        checkpoint::to_bytes(&result.params.named_tensors()),
    );
    outputs.add(
        "epoch_log.csv",
        with_leak_warning(cfg, epoch_log_csv(&result.logs, cfg.deterministic)),
    );
    outputs.commit(&cfg.out)?;

    let best = &result.logs[result.best_epoch - 1];
    println!(
        "best epoch {} of {} (validation micro-F1 {:.6}); outputs in {}",
        result.best_epoch,
        cfg.epochs,
        best.val_micro_f1,
        cfg.out.display()
    );
    Ok(())
}
