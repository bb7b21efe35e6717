//! Clause classification engine.
//!
//! The pipeline runs in five stages: load a labeled clause corpus, normalize
//! and filter the text, tokenize into fixed-length subword sequences, run a
//! transformer encoder whose backbone can be frozen while a dense softmax
//! head is trained, and score predictions with per-class and aggregate F1.
//!
//! Modules mirror those stages:
//! - [`corpus`]: JSONL clauses, the class taxonomy, split handling, length stats
//! - [`textprep`]: lowercasing, punctuation/stopword stripping, per-class
//!   frequent-word filtering
//! - [`tokenizer`]: WordPiece vocabulary and greedy longest-prefix encoding
//! - [`tensor`]: minimal dense row-major tensors over `f32`/`f64`
//! - [`encoder`]: embeddings, self-attention layers, pooling, classifier head
//! - [`checkpoint`]: binary named-tensor serialization
//! - [`trainer`]: Adam, epoch loop, validation-based selection, feature cache
//! - [`metrics`]: confusion matrix, precision/recall/F1, report auditing

pub mod checkpoint;
pub mod corpus;
pub mod encoder;
pub mod metrics;
pub mod tensor;
pub mod textprep;
pub mod tokenizer;
pub mod trainer;

pub use corpus::{Clause, LengthHistogram, SplitCorpus, Taxonomy};
pub use encoder::{EncoderConfig, ForwardTrace, Mode, ParameterSet, TrainMode};
pub use metrics::{ClassReport, ConfusionMatrix, SummaryReport};
pub use tensor::Tensor;
pub use textprep::{ClassVocabulary, FilterLexicon, FilterMode, PipelineStage, StopwordList};
pub use tokenizer::{TokenSequence, WordPieceVocab};
pub use trainer::{EncodedSplits, EpochLog, Example, FitResult, OptimizerState, TrainConfig};
