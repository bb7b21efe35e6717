//! Three-stage text preprocessing: lowercasing with punctuation stripping,
//! stopword removal, and per-class frequent-word filtering.
//!
//! Stages are strictly cumulative. The filter stage keeps only words that made
//! a class's top-K frequency list; the class lists are built from the train
//! split alone so no information flows back from validation or test text.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{Clause, Taxonomy};

/// Pinned English stopword list, 179 function words, one per line.
pub const BUNDLED_STOPWORDS: &str = include_str!("../data/stopwords_en.txt");

#[derive(Debug, Error)]
pub enum TextprepError {
    #[error("failed to read {path}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("stopword {word:?} is not lowercase or contains whitespace")]
    BadStopword { word: String },
    #[error("top-K must be at least 1")]
    ZeroK,
    #[error("oracle filter mode given class {class_id}, but only {num_classes} classes exist")]
    InvalidOracleClass { class_id: usize, num_classes: usize },
    #[error("filter stage requires a lexicon, none was provided")]
    MissingLexicon,
    #[error("lexicon line {line}: {message}")]
    LexiconFormat { line: usize, message: String },
}

/// Lowercase function words dropped before frequency counting and filtering.
/// Holds the SHA-256 of the source text so reports can pin the exact list.
#[derive(Debug, Clone)]
pub struct StopwordList {
    words: HashSet<String>,
    sha256: String,
}

impl StopwordList {
    /// One word per line; blank lines ignored. Entries must already be
    /// lowercase with no internal whitespace.
    pub fn from_text(text: &str) -> Result<Self, TextprepError> {
        let mut words = HashSet::new();
        for line in text.lines() {
            let word = line.trim();
            if word.is_empty() {
                continue;
            }
            if word.chars().any(|c| c.is_whitespace() || c.is_uppercase()) {
                return Err(TextprepError::BadStopword {
                    word: word.to_string(),
                });
            }
            words.insert(word.to_string());
        }
        let mut hasher = Sha256::new();
        hasher.update(text.as_bytes());
        let sha256 = format!("{:x}", hasher.finalize());
        Ok(StopwordList { words, sha256 })
    }

    /// The list shipped with this crate.
    pub fn bundled() -> Self {
        Self::from_text(BUNDLED_STOPWORDS).expect("bundled stopword list is valid")
    }

    pub fn load(path: &Path) -> Result<Self, TextprepError> {
        let text = fs::read_to_string(path).map_err(|source| TextprepError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_text(&text)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Hex SHA-256 of the source text the list was parsed from.
    pub fn sha256_hex(&self) -> &str {
        &self.sha256
    }
}

/// Top-K most frequent post-stopword words of one class's train clauses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassVocabulary {
    pub class_id: usize,
    /// Count descending, ties broken by word descending; at most K entries.
    pub top_words: Vec<String>,
    pub frequency: BTreeMap<String, u64>,
}

/// Per-class vocabularies plus their union, built from the train split only.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilterLexicon {
    pub k: usize,
    pub per_class: Vec<ClassVocabulary>,
    pub union: HashSet<String>,
}

/// Which transforms apply, cumulatively.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PipelineStage {
    Lowercase,
    LowercaseStrip,
    LowercaseStripFilter,
}

impl PipelineStage {
    pub fn from_index(stage: usize) -> Option<Self> {
        match stage {
            1 => Some(PipelineStage::Lowercase),
            2 => Some(PipelineStage::LowercaseStrip),
            3 => Some(PipelineStage::LowercaseStripFilter),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        match self {
            PipelineStage::Lowercase => 1,
            PipelineStage::LowercaseStrip => 2,
            PipelineStage::LowercaseStripFilter => 3,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            PipelineStage::Lowercase => "lowercase",
            PipelineStage::LowercaseStrip => "lowercase+strip",
            PipelineStage::LowercaseStripFilter => "lowercase+strip+filter",
        }
    }
}

/// Word set used by the filter stage. Union is label-free; Oracle selects one
/// class's list and therefore leaks the gold label when used at test time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterMode {
    Union,
    Oracle(usize),
}

// The 32 ASCII punctuation characters plus Unicode general-category
// Punctuation. Eight ASCII marks ($ + < = > ^ ` | ~) fall outside \p{P} and
// are listed explicitly.
fn punctuation_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[\p{P}$+<=>^`|~]").expect("valid pattern"))
}

/// Lowercases, replaces punctuation with spaces so joined words split apart,
/// and collapses whitespace runs. Idempotent.
pub fn normalize(text: &str) -> String {
    let lowered = text.to_lowercase();
    let spaced = punctuation_pattern().replace_all(&lowered, " ");
    spaced.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Drops tokens that are stopwords; expects normalized input.
pub fn remove_stopwords(text: &str, stopwords: &StopwordList) -> String {
    text.split_whitespace()
        .filter(|w| !stopwords.contains(w))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Counts words over normalize + remove_stopwords output of the train clauses
/// and keeps each class's top K by (count descending, word descending). A
/// class with no clauses gets an empty vocabulary.
pub fn build_filter_lexicon(
    train: &[Clause],
    taxonomy: &Taxonomy,
    k: usize,
    stopwords: &StopwordList,
) -> Result<FilterLexicon, TextprepError> {
    if k == 0 {
        return Err(TextprepError::ZeroK);
    }
    let num_classes = taxonomy.num_classes();
    let mut counts: Vec<HashMap<String, u64>> = vec![HashMap::new(); num_classes];
    for clause in train {
        let stripped = remove_stopwords(&normalize(&clause.text), stopwords);
        for word in stripped.split_whitespace() {
            *counts[clause.label].entry(word.to_string()).or_insert(0) += 1;
        }
    }
    let mut per_class = Vec::with_capacity(num_classes);
    let mut union = HashSet::new();
    for (class_id, class_counts) in counts.into_iter().enumerate() {
        let mut ranked: Vec<(String, u64)> = class_counts.into_iter().collect();
        ranked.sort_by(|a, b| (b.1, &b.0).cmp(&(a.1, &a.0)));
        ranked.truncate(k);
        let top_words: Vec<String> = ranked.iter().map(|(w, _)| w.clone()).collect();
        union.extend(top_words.iter().cloned());
        per_class.push(ClassVocabulary {
            class_id,
            frequency: ranked.into_iter().collect(),
            top_words,
        });
    }
    Ok(FilterLexicon {
        k,
        per_class,
        union,
    })
}

/// Keeps tokens that belong to the selected word set, preserving order and
/// duplicates; expects normalized, stopword-stripped input.
pub fn filter_text(
    text: &str,
    lexicon: &FilterLexicon,
    mode: FilterMode,
) -> Result<String, TextprepError> {
    let keep: Box<dyn Fn(&str) -> bool> = match mode {
        FilterMode::Union => Box::new(|w: &str| lexicon.union.contains(w)),
        FilterMode::Oracle(class_id) => {
            let vocab =
                lexicon
                    .per_class
                    .get(class_id)
                    .ok_or(TextprepError::InvalidOracleClass {
                        class_id,
                        num_classes: lexicon.per_class.len(),
                    })?;
            let set: HashSet<&str> = vocab.top_words.iter().map(String::as_str).collect();
            Box::new(move |w: &str| set.contains(w))
        }
    };
    Ok(text
        .split_whitespace()
        .filter(|w| keep(w))
        .collect::<Vec<_>>()
        .join(" "))
}

/// Applies the stage's transforms in the fixed order normalize, then stopword
/// removal, then frequent-word filtering.
pub fn preprocess(
    clause: &Clause,
    stage: PipelineStage,
    stopwords: &StopwordList,
    lexicon: Option<&FilterLexicon>,
    mode: FilterMode,
) -> Result<String, TextprepError> {
    let normalized = normalize(&clause.text);
    if stage == PipelineStage::Lowercase {
        return Ok(normalized);
    }
    let stripped = remove_stopwords(&normalized, stopwords);
    if stage == PipelineStage::LowercaseStrip {
        return Ok(stripped);
    }
    let lexicon = lexicon.ok_or(TextprepError::MissingLexicon)?;
    filter_text(&stripped, lexicon, mode)
}

/// Serializes a lexicon: header `K=<int>`, then one `class_id<TAB>word:count`
/// line per kept word, classes ascending and words in tie-break order.
pub fn lexicon_to_string(lexicon: &FilterLexicon) -> String {
    let mut out = format!("K={}\n", lexicon.k);
    for vocab in &lexicon.per_class {
        for word in &vocab.top_words {
            let count = vocab.frequency.get(word).copied().unwrap_or(0);
            let _ = writeln!(out, "{}\t{}:{}", vocab.class_id, word, count);
        }
    }
    out
}

/// Parses the format written by [`lexicon_to_string`]. `num_classes` bounds
/// the class ids and sizes the per-class table.
pub fn lexicon_from_str(data: &str, num_classes: usize) -> Result<FilterLexicon, TextprepError> {
    let mut lines = data.lines().enumerate();
    let (_, header) = lines.next().ok_or(TextprepError::LexiconFormat {
        line: 1,
        message: "missing K= header".to_string(),
    })?;
    let k: usize = header
        .strip_prefix("K=")
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| TextprepError::LexiconFormat {
            line: 1,
            message: format!("expected K=<int>, got {header:?}"),
        })?;
    if k == 0 {
        return Err(TextprepError::ZeroK);
    }
    let mut per_class: Vec<ClassVocabulary> = (0..num_classes)
        .map(|class_id| ClassVocabulary {
            class_id,
            top_words: Vec::new(),
            frequency: BTreeMap::new(),
        })
        .collect();
    let mut union = HashSet::new();
    for (i, line) in lines {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| TextprepError::LexiconFormat {
            line: line_no,
            message,
        };
        let (class_part, entry) = line
            .split_once('\t')
            .ok_or_else(|| bad("expected class_id<TAB>word:count".to_string()))?;
        let class_id: usize = class_part
            .trim()
            .parse()
            .map_err(|_| bad(format!("bad class id {class_part:?}")))?;
        if class_id >= num_classes {
            return Err(bad(format!(
                "class id {class_id} out of range (num_classes {num_classes})"
            )));
        }
        let (word, count_part) = entry
            .rsplit_once(':')
            .ok_or_else(|| bad("expected word:count".to_string()))?;
        let count: u64 = count_part
            .trim()
            .parse()
            .map_err(|_| bad(format!("bad count {count_part:?}")))?;
        if word.is_empty() || count == 0 {
            return Err(bad(format!("invalid entry {entry:?}")));
        }
        let vocab = &mut per_class[class_id];
        if vocab.top_words.len() >= k {
            return Err(bad(format!("class {class_id} has more than K={k} words")));
        }
        vocab.top_words.push(word.to_string());
        vocab.frequency.insert(word.to_string(), count);
        union.insert(word.to_string());
    }
    Ok(FilterLexicon {
        k,
        per_class,
        union,
    })
}

pub fn load_lexicon(path: &Path, num_classes: usize) -> Result<FilterLexicon, TextprepError> {
    let data = fs::read_to_string(path).map_err(|source| TextprepError::Io {
        path: path.display().to_string(),
        source,
    })?;
    lexicon_from_str(&data, num_classes)
}
