//! Corpus statistics: per-class clause counts and clause-length histograms,
//! global and per class, over every split the caller provides.

use anyhow::Result;
use lexclass_core::corpus::{class_counts, class_counts_csv, length_histogram};

use super::load_clauses;
use crate::config::{require, Resolved, RESOLVED_NAME};
use crate::outputs::OutputSet;

pub fn run(cfg: &Resolved) -> Result<()> {
    let mut clauses = load_clauses(require(&cfg.train_file, "--train-file")?, cfg)?;
    for path in [&cfg.validation_file, &cfg.test_file].into_iter().flatten() {
        clauses.extend(load_clauses(path, cfg)?);
    }
    let counts = class_counts(&clauses, &cfg.taxonomy);
    let histogram = length_histogram(&clauses, cfg.bucket_width, true)?;

    let mut outputs = OutputSet::new();
    outputs.add(RESOLVED_NAME, cfg.file_string());
    outputs.add("class_counts.csv", class_counts_csv(&counts, &cfg.taxonomy));
    outputs.add("length_histogram.csv", histogram.to_csv());
    outputs.add("length_histogram_per_class.csv", histogram.per_class_csv());
    outputs.commit(&cfg.out)?;
    println!(
        "stats over {} clauses written to {}",
        clauses.len(),
        cfg.out.display()
    );
    Ok(())
}
