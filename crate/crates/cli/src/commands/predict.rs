//! Classifies line-delimited JSON records: one `class_id,name,probability`
//! row per input record, in input order, with no header so an empty input
//! yields an empty file.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use lexclass_core::corpus::Clause;
use lexclass_core::trainer::load_checkpoint;

use super::{
    encode_clauses, load_lexicon_if_needed, load_vocab, predict_one, warn_if_oracle,
    with_leak_warning,
};
use crate::config::{require, Resolved, RESOLVED_NAME};
use crate::outputs::OutputSet;

/// Parses prediction input. Records carry a required string `text` and an
/// optional integer `label`; oracle filtering needs the label on every
/// record, and refusal happens before any model work.
fn parse_records(text: &str, path: &Path, cfg: &Resolved) -> Result<Vec<Clause>> {
    let num_classes = cfg.taxonomy.num_classes();
    let mut records = Vec::new();
    for (index, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let number = index + 1;
        let value: serde_json::Value = serde_json::from_str(line)
            .with_context(|| format!("{}:{number}: invalid JSON", path.display()))?;
        let clause_text = value.get("text").and_then(|v| v.as_str()).ok_or_else(|| {
            anyhow!(
                "{}:{number}: record needs a string `text` field",
                path.display()
            )
        })?;
        let label = value.get("label").and_then(|v| v.as_u64());
        if cfg.oracle_active() && label.is_none() {
            bail!(
                "{}:{number}: oracle filter mode requires a label on every record; \
                 rerun with --filter-mode union",
                path.display()
            );
        }
        let label = label.unwrap_or(0) as usize;
        if label >= num_classes {
            bail!(
                "{}:{number}: label {label} outside the {num_classes}-class taxonomy",
                path.display()
            );
        }
        records.push(Clause {
            text: clause_text.to_string(),
            label,
        });
    }
    Ok(records)
}

pub fn run(cfg: &Resolved) -> Result<()> {
    warn_if_oracle(cfg);
    let vocab = load_vocab(cfg)?;
    let lexicon = load_lexicon_if_needed(cfg)?;
    let encoder_config = cfg.encoder_config(vocab.len())?;
    let checkpoint_path = require(&cfg.checkpoint, "--checkpoint")?;
    let (params, _) = load_checkpoint(checkpoint_path, &encoder_config)
        .with_context(|| format!("loading checkpoint {}", checkpoint_path.display()))?;

    let input_path = require(&cfg.input, "--input")?;
    let text = fs::read_to_string(input_path)
        .with_context(|| format!("reading input {}", input_path.display()))?;
    let records = parse_records(&text, input_path, cfg)?;
    let examples = encode_clauses(&records, cfg, lexicon.as_ref(), &vocab)?;

    let mut rows = String::new();
    for example in &examples {
        let (pred, probability) = predict_one(&params, &encoder_config, &example.tokens)?;
        let name = cfg.taxonomy.name(pred).unwrap_or("?");
        let _ = writeln!(rows, "{pred},{name},{probability:.6}");
    }

    let mut outputs = OutputSet::new();
    outputs.add(RESOLVED_NAME, cfg.file_string());
    outputs.add("predictions.csv", with_leak_warning(cfg, rows));
    outputs.commit(&cfg.out)?;
    println!(
        "{} predictions written to {}",
        examples.len(),
        cfg.out.display()
    );
    Ok(())
}
