//! Labeled clause corpus: JSONL records, the class taxonomy, train/validation/test
//! splits, and word-length statistics over raw text.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

/// Bundled 100-class provision taxonomy (id,name,count CSV).
pub const BUNDLED_TAXONOMY_CSV: &str = include_str!("../data/provisions.csv");

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read {path}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: malformed record")]
    MalformedRecord {
        line: usize,
        source: serde_json::Error,
    },
    #[error("line {line}: label {label} out of range (expected 0..{num_classes})")]
    LabelOutOfRange {
        line: usize,
        label: usize,
        num_classes: usize,
    },
    #[error("line {line}: clause text is empty after trimming")]
    EmptyText { line: usize },
    #[error("taxonomy row {row}: {message}")]
    TaxonomyRow { row: usize, message: String },
    #[error(
        "taxonomy ids are not contiguous: expected every id in 0..{expected}, missing {missing}"
    )]
    NonContiguousIds { expected: usize, missing: usize },
    #[error("taxonomy has duplicate {what}: {value}")]
    TaxonomyDuplicate { what: &'static str, value: String },
    #[error("taxonomy is empty")]
    EmptyTaxonomy,
    #[error("histogram bucket width must be at least 1")]
    ZeroBucketWidth,
}

/// One labeled provision. Text is guaranteed non-empty after trimming and the
/// label is a valid taxonomy id; both are enforced at load time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Clause {
    pub text: String,
    pub label: usize,
}

#[derive(Debug, Deserialize)]
struct RawClause {
    text: String,
    label: usize,
}

/// Class id to (name, reference count) table with ids contiguous from zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Taxonomy {
    names: Vec<String>,
    reference_counts: Vec<u64>,
}

impl Taxonomy {
    pub fn num_classes(&self) -> usize {
        self.names.len()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(|s| s.as_str())
    }

    /// Reference count distributed with the taxonomy; metadata only, never
    /// used to validate a loaded corpus.
    pub fn reference_count(&self, id: usize) -> Option<u64> {
        self.reference_counts.get(id).copied()
    }

    /// Parses id,name,count CSV rows (with a header). Rows may appear in any
    /// order; ids must cover 0..C-1 exactly and names must be unique.
    pub fn from_csv(data: &str) -> Result<Self, CorpusError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(data.as_bytes());
        let mut rows: Vec<(usize, String, u64)> = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let row = i + 2; // 1-based, after the header
            let record = record.map_err(|e| CorpusError::TaxonomyRow {
                row,
                message: e.to_string(),
            })?;
            if record.len() != 3 {
                return Err(CorpusError::TaxonomyRow {
                    row,
                    message: format!("expected 3 fields, got {}", record.len()),
                });
            }
            let id: usize = record[0]
                .trim()
                .parse()
                .map_err(|_| CorpusError::TaxonomyRow {
                    row,
                    message: format!("bad id {:?}", &record[0]),
                })?;
            let count: u64 = record[2]
                .trim()
                .parse()
                .map_err(|_| CorpusError::TaxonomyRow {
                    row,
                    message: format!("bad count {:?}", &record[2]),
                })?;
            rows.push((id, record[1].trim().to_string(), count));
        }
        if rows.is_empty() {
            return Err(CorpusError::EmptyTaxonomy);
        }
        let n = rows.len();
        let mut names = vec![String::new(); n];
        let mut counts = vec![0u64; n];
        let mut seen = vec![false; n];
        for (id, name, count) in rows {
            if id >= n || seen[id] {
                if id < n && seen[id] {
                    return Err(CorpusError::TaxonomyDuplicate {
                        what: "id",
                        value: id.to_string(),
                    });
                }
                // An id beyond n-1 implies some id below n is missing.
                let missing = (0..n).find(|&i| !seen[i]).unwrap_or(0);
                return Err(CorpusError::NonContiguousIds {
                    expected: n,
                    missing,
                });
            }
            seen[id] = true;
            names[id] = name;
            counts[id] = count;
        }
        let mut sorted: Vec<&String> = names.iter().collect();
        sorted.sort();
        for pair in sorted.windows(2) {
            if pair[0] == pair[1] {
                return Err(CorpusError::TaxonomyDuplicate {
                    what: "name",
                    value: pair[0].to_string(),
                });
            }
        }
        Ok(Taxonomy {
            names,
            reference_counts: counts,
        })
    }

    /// The taxonomy shipped with this crate.
    pub fn bundled() -> Self {
        Self::from_csv(BUNDLED_TAXONOMY_CSV).expect("bundled taxonomy is valid")
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let data = fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_csv(&data)
    }
}

/// Train/validation/test clause lists. The same taxonomy governs all three.
#[derive(Debug, Clone)]
pub struct SplitCorpus {
    pub train: Vec<Clause>,
    pub validation: Vec<Clause>,
    pub test: Vec<Clause>,
}

impl SplitCorpus {
    pub fn load(
        train: &Path,
        validation: &Path,
        test: &Path,
        taxonomy: &Taxonomy,
    ) -> Result<Self, CorpusError> {
        Ok(SplitCorpus {
            train: load_corpus(train, taxonomy)?,
            validation: load_corpus(validation, taxonomy)?,
            test: load_corpus(test, taxonomy)?,
        })
    }
}

/// Parses one JSON record per line with fields `text` and `label`, in file
/// order. Blank lines are rejected as malformed; errors carry the 1-based
/// line number.
pub fn parse_corpus(data: &str, taxonomy: &Taxonomy) -> Result<Vec<Clause>, CorpusError> {
    let mut clauses = Vec::new();
    for (i, line) in data.lines().enumerate() {
        let line_no = i + 1;
        let raw: RawClause =
            serde_json::from_str(line).map_err(|source| CorpusError::MalformedRecord {
                line: line_no,
                source,
            })?;
        if raw.text.trim().is_empty() {
            return Err(CorpusError::EmptyText { line: line_no });
        }
        if raw.label >= taxonomy.num_classes() {
            return Err(CorpusError::LabelOutOfRange {
                line: line_no,
                label: raw.label,
                num_classes: taxonomy.num_classes(),
            });
        }
        clauses.push(Clause {
            text: raw.text,
            label: raw.label,
        });
    }
    Ok(clauses)
}

pub fn load_corpus(path: &Path, taxonomy: &Taxonomy) -> Result<Vec<Clause>, CorpusError> {
    let data = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_corpus(&data, taxonomy)
}

/// Clause count per class id. Every taxonomy class is present, zero-count
/// classes included, so the values always sum to the number of clauses.
pub fn class_counts(clauses: &[Clause], taxonomy: &Taxonomy) -> BTreeMap<usize, u64> {
    let mut counts: BTreeMap<usize, u64> = (0..taxonomy.num_classes()).map(|c| (c, 0)).collect();
    for clause in clauses {
        *counts
            .get_mut(&clause.label)
            .expect("label validated at load") += 1;
    }
    counts
}

/// Raw word length of a clause: whitespace-delimited token count before any
/// preprocessing.
pub fn raw_word_length(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Histogram of raw clause word lengths. Bucket `i` covers lengths in
/// `[i*width, (i+1)*width)`; only non-empty buckets are stored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LengthHistogram {
    pub bucket_width: usize,
    pub buckets: BTreeMap<usize, u64>,
    /// Per-class breakdown keyed by (class id, bucket index); populated only
    /// when requested.
    pub per_class: Option<BTreeMap<(usize, usize), u64>>,
}

pub fn length_histogram(
    clauses: &[Clause],
    bucket_width: usize,
    per_class: bool,
) -> Result<LengthHistogram, CorpusError> {
    if bucket_width == 0 {
        return Err(CorpusError::ZeroBucketWidth);
    }
    let mut buckets: BTreeMap<usize, u64> = BTreeMap::new();
    let mut by_class: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    for clause in clauses {
        let bucket = raw_word_length(&clause.text) / bucket_width;
        *buckets.entry(bucket).or_insert(0) += 1;
        if per_class {
            *by_class.entry((clause.label, bucket)).or_insert(0) += 1;
        }
    }
    Ok(LengthHistogram {
        bucket_width,
        buckets,
        per_class: per_class.then_some(by_class),
    })
}

impl LengthHistogram {
    /// `bucket_start,count` rows with a header, buckets ascending.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bucket_start,count\n");
        for (&bucket, &count) in &self.buckets {
            let _ = writeln!(out, "{},{}", bucket * self.bucket_width, count);
        }
        out
    }

    /// `class_id,bucket_start,count` rows with a header, (class, bucket)
    /// ascending. Empty when the per-class breakdown was not requested.
    pub fn per_class_csv(&self) -> String {
        let mut out = String::from("class_id,bucket_start,count\n");
        if let Some(by_class) = &self.per_class {
            for (&(class, bucket), &count) in by_class {
                let _ = writeln!(out, "{},{},{}", class, bucket * self.bucket_width, count);
            }
        }
        out
    }
}

/// `class_id,name,count` rows with a header, ids ascending.
pub fn class_counts_csv(counts: &BTreeMap<usize, u64>, taxonomy: &Taxonomy) -> String {
    let mut out = String::from("class_id,name,count\n");
    for (&class, &count) in counts {
        let name = taxonomy.name(class).unwrap_or("");
        let _ = writeln!(out, "{},{},{}", class, name, count);
    }
    out
}
