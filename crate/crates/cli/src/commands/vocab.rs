//! Builds the per-class frequent-word lexicon from the train split only and
//! persists it for the filter stage.

use anyhow::Result;
use lexclass_core::textprep::{build_filter_lexicon, lexicon_to_string};

use super::load_clauses;
use crate::config::{require, Resolved, RESOLVED_NAME};
use crate::outputs::OutputSet;

pub fn run(cfg: &Resolved) -> Result<()> {
    let train = load_clauses(require(&cfg.train_file, "--train-file")?, cfg)?;
    let lexicon = build_filter_lexicon(&train, &cfg.taxonomy, cfg.k, &cfg.stopwords)?;

    let mut outputs = OutputSet::new();
    outputs.add(RESOLVED_NAME, cfg.file_string());
    outputs.add("lexicon.txt", lexicon_to_string(&lexicon));
    outputs.commit(&cfg.out)?;
    println!(
        "lexicon with K={} over {} classes written to {}",
        lexicon.k,
        lexicon.per_class.len(),
        cfg.out.display()
    );
    Ok(())
}
