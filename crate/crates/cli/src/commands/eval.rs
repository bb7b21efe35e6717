//! Evaluates a checkpoint on the test split: summary metrics, per-class
//! table, confusion grid, and the self-consistency audit.

use anyhow::{Context, Result};
use lexclass_core::metrics::{
    audit_csv, audit_report, confusion, confusion_csv, per_class_csv, summary_csv, summary_report,
};
use lexclass_core::trainer::load_checkpoint;

use super::{
    encode_clauses, load_clauses, load_lexicon_if_needed, load_vocab, predict_one, warn_if_oracle,
    with_leak_warning,
};
use crate::config::{require, Resolved, RESOLVED_NAME};
use crate::outputs::OutputSet;

pub fn run(cfg: &Resolved) -> Result<()> {
    warn_if_oracle(cfg);
    let vocab = load_vocab(cfg)?;
    let lexicon = load_lexicon_if_needed(cfg)?;
    let encoder_config = cfg.encoder_config(vocab.len())?;
    let checkpoint_path = require(&cfg.checkpoint, "--checkpoint")?;
    let (params, _) = load_checkpoint(checkpoint_path, &encoder_config)
        .with_context(|| format!("loading checkpoint {}", checkpoint_path.display()))?;

    let test = load_clauses(require(&cfg.test_file, "--test-file")?, cfg)?;
    let examples = encode_clauses(&test, cfg, lexicon.as_ref(), &vocab)?;
    let mut golds = Vec::with_capacity(examples.len());
    let mut preds = Vec::with_capacity(examples.len());
    for example in &examples {
        let (pred, _) = predict_one(&params, &encoder_config, &example.tokens)?;
        golds.push(example.label);
        preds.push(pred);
    }
    let matrix = confusion(&golds, &preds, encoder_config.num_classes)?;
    let summary = summary_report(&matrix)?;
    let findings = audit_report(&summary.per_class, cfg.audit_tolerance);

    let mut outputs = OutputSet::new();
    outputs.add(RESOLVED_NAME, cfg.file_string());
    outputs.add("summary.csv", with_leak_warning(cfg, summary_csv(&summary)));
    outputs.add(
        "per_class.csv",
        with_leak_warning(cfg, per_class_csv(&summary.per_class, &cfg.taxonomy)?),
    );
    outputs.add(
        "confusion.csv",
        with_leak_warning(cfg, confusion_csv(&matrix)),
    );
    outputs.add("audit.csv", with_leak_warning(cfg, audit_csv(&findings)));
    outputs.commit(&cfg.out)?;

    println!(
        "micro-F1 {:.6}, macro-F1 {:.6}, accuracy {:.6} over {} examples; reports in {}",
        summary.micro_f1,
        summary.macro_f1,
        summary.accuracy,
        examples.len(),
        cfg.out.display()
    );
    Ok(())
}
