//! Run-configuration resolution: built-in defaults, then a flat `key=value`
//! config file, then command-line flags, materialized into one explicit
//! [`Resolved`] value that is serialized next to every command's outputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use lexclass_core::corpus::Taxonomy;
use lexclass_core::encoder::{EncoderConfig, TrainMode};
use lexclass_core::textprep::{PipelineStage, StopwordList};
use lexclass_core::trainer::{
    TrainConfig, DEFAULT_BATCH_SIZE, DEFAULT_EPOCHS, DEFAULT_FULL_LEARNING_RATE,
    DEFAULT_HEAD_LEARNING_RATE,
};

/// File name of the materialized configuration written into the output
/// directory; feeding it back through `--config` reproduces the run.
pub const RESOLVED_NAME: &str = "config.resolved";

/// Word-list selection for the filter stage. `Oracle` filters each clause by
/// its gold label's list, which leaks label information into preprocessing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterModeSetting {
    Union,
    Oracle,
}

impl FilterModeSetting {
    fn parse(value: &str) -> Result<Self> {
        match value {
            "union" => Ok(FilterModeSetting::Union),
            "oracle" => Ok(FilterModeSetting::Oracle),
            other => bail!("filter mode must be `union` or `oracle`, got `{other}`"),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FilterModeSetting::Union => "union",
            FilterModeSetting::Oracle => "oracle",
        }
    }
}

/// Where the taxonomy or stopword list comes from: the data compiled into the
/// library, or a file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Source {
    Builtin,
    File(PathBuf),
}

impl Source {
    fn parse(value: &str) -> Self {
        if value == "builtin" {
            Source::Builtin
        } else {
            Source::File(PathBuf::from(value))
        }
    }

    fn render(&self) -> String {
        match self {
            Source::Builtin => "builtin".to_string(),
            Source::File(path) => path.display().to_string(),
        }
    }
}

/// Flags shared by every subcommand. Commands ignore the ones they do not
/// use, so one config file can drive a whole stats/vocab/train/eval flow.
#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Flat key=value config file; flags override its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (created if absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Train split, one JSON record {"text", "label"} per line.
    #[arg(long)]
    pub train_file: Option<PathBuf>,
    /// Validation split in the same format.
    #[arg(long)]
    pub validation_file: Option<PathBuf>,
    /// Test split in the same format.
    #[arg(long)]
    pub test_file: Option<PathBuf>,
    /// Class taxonomy CSV (id,name,count), or `builtin`.
    #[arg(long)]
    pub taxonomy: Option<String>,
    /// Stopword list, one word per line, or `builtin`.
    #[arg(long)]
    pub stopwords: Option<String>,
    /// WordPiece vocabulary, one token per line.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Per-class frequent-word lexicon produced by `vocab`.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// Model checkpoint to evaluate or predict with.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Prediction input, one JSON record {"text"[, "label"]} per line.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Seed for parameter initialization, shuffling, and dropout.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Preprocessing stage: 1 lowercase, 2 +stopword strip, 3 +filter.
    #[arg(long)]
    pub stage: Option<usize>,
    /// Filter word-list selection: `union` or `oracle`.
    #[arg(long)]
    pub filter_mode: Option<String>,
    /// Words kept per class when building the filter lexicon.
    #[arg(long)]
    pub k: Option<usize>,
    /// Training epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Examples per optimizer step.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// `frozen` trains the head only; `full` also trains the backbone.
    #[arg(long)]
    pub train_mode: Option<String>,
    /// Encoder layers.
    #[arg(long)]
    pub num_layers: Option<usize>,
    /// Hidden width.
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Attention heads (must divide hidden).
    #[arg(long)]
    pub num_heads: Option<usize>,
    /// Feed-forward inner width.
    #[arg(long)]
    pub ff_dim: Option<usize>,
    /// Token sequence length after padding/truncation.
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Dropout probability on pooled features during training.
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Histogram bucket width in words.
    #[arg(long)]
    pub bucket_width: Option<usize>,
    /// Allowed |reported − harmonic| deviation before audit flags a row.
    #[arg(long)]
    pub audit_tolerance: Option<f64>,
    /// Force reproducible output: zero timing columns.
    #[arg(long)]
    pub deterministic: bool,
    /// Train the head on pooled features cached after one encoder pass.
    #[arg(long)]
    pub cache_features: bool,
}

/// Every setting made explicit, with the taxonomy and stopword list already
/// loaded so commands share one copy.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub out: PathBuf,
    pub train_file: Option<PathBuf>,
    pub validation_file: Option<PathBuf>,
    pub test_file: Option<PathBuf>,
    pub taxonomy_source: Source,
    pub stopwords_source: Source,
    pub vocab: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub seed: u64,
    pub stage: PipelineStage,
    pub filter_mode: FilterModeSetting,
    pub k: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub train_mode: TrainMode,
    pub num_layers: usize,
    pub hidden: usize,
    pub num_heads: usize,
    pub ff_dim: usize,
    pub max_len: usize,
    pub dropout: f64,
    pub bucket_width: usize,
    pub audit_tolerance: f64,
    pub deterministic: bool,
    pub cache_features: bool,
    pub taxonomy: Taxonomy,
    pub stopwords: StopwordList,
}

/// Accumulates the three precedence layers before defaults are applied.
#[derive(Debug, Default)]
struct Builder {
    out: Option<PathBuf>,
    train_file: Option<PathBuf>,
    validation_file: Option<PathBuf>,
    test_file: Option<PathBuf>,
    taxonomy: Option<Source>,
    stopwords: Option<Source>,
    vocab: Option<PathBuf>,
    lexicon: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    input: Option<PathBuf>,
    seed: Option<u64>,
    stage: Option<usize>,
    filter_mode: Option<FilterModeSetting>,
    k: Option<usize>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    train_mode: Option<TrainMode>,
    num_layers: Option<usize>,
    hidden: Option<usize>,
    num_heads: Option<usize>,
    ff_dim: Option<usize>,
    max_len: Option<usize>,
    dropout: Option<f64>,
    bucket_width: Option<usize>,
    audit_tolerance: Option<f64>,
    deterministic: Option<bool>,
    cache_features: Option<bool>,
    stopwords_sha256: Option<String>,
}

fn parse_train_mode(value: &str) -> Result<TrainMode> {
    match value {
        "frozen" => Ok(TrainMode::FrozenHead),
        "full" => Ok(TrainMode::FullFineTune),
        other => bail!("train mode must be `frozen` or `full`, got `{other}`"),
    }
}

fn parse_scalar<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| anyhow!("config key `{key}`: cannot parse `{value}`: {e}"))
}

impl Builder {
    fn apply_file(&mut self, text: &str, path: &Path) -> Result<()> {
        for (number, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                anyhow!(
                    "{}:{}: expected key=value, got `{line}`",
                    path.display(),
                    number + 1
                )
            })?;
            let (key, value) = (key.trim(), value.trim());
            self.apply_key(key, value)
                .with_context(|| format!("{}:{}", path.display(), number + 1))?;
        }
        Ok(())
    }

    fn apply_key(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "out" => self.out = Some(PathBuf::from(value)),
            "train_file" => self.train_file = Some(PathBuf::from(value)),
            "validation_file" => self.validation_file = Some(PathBuf::from(value)),
            "test_file" => self.test_file = Some(PathBuf::from(value)),
            "taxonomy" => self.taxonomy = Some(Source::parse(value)),
            "stopwords" => self.stopwords = Some(Source::parse(value)),
            "vocab" => self.vocab = Some(PathBuf::from(value)),
            "lexicon" => self.lexicon = Some(PathBuf::from(value)),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(value)),
            "input" => self.input = Some(PathBuf::from(value)),
            "seed" => self.seed = Some(parse_scalar(key, value)?),
            "stage" => self.stage = Some(parse_scalar(key, value)?),
            "filter_mode" => self.filter_mode = Some(FilterModeSetting::parse(value)?),
            "k" => self.k = Some(parse_scalar(key, value)?),
            "epochs" => self.epochs = Some(parse_scalar(key, value)?),
            "batch_size" => self.batch_size = Some(parse_scalar(key, value)?),
            "learning_rate" => self.learning_rate = Some(parse_scalar(key, value)?),
            "train_mode" => self.train_mode = Some(parse_train_mode(value)?),
            "num_layers" => self.num_layers = Some(parse_scalar(key, value)?),
            "hidden" => self.hidden = Some(parse_scalar(key, value)?),
            "num_heads" => self.num_heads = Some(parse_scalar(key, value)?),
            "ff_dim" => self.ff_dim = Some(parse_scalar(key, value)?),
            "max_len" => self.max_len = Some(parse_scalar(key, value)?),
            "dropout" => self.dropout = Some(parse_scalar(key, value)?),
            "bucket_width" => self.bucket_width = Some(parse_scalar(key, value)?),
            "audit_tolerance" => self.audit_tolerance = Some(parse_scalar(key, value)?),
            "deterministic" => self.deterministic = Some(parse_scalar(key, value)?),
            "cache_features" => self.cache_features = Some(parse_scalar(key, value)?),
            "stopwords_sha256" => self.stopwords_sha256 = Some(value.to_string()),
            other => bail!("unknown config key `{other}`"),
        }
        Ok(())
    }

    fn apply_flags(&mut self, args: &CommonArgs) -> Result<()> {
        macro_rules! take {
            ($field:ident) => {
                if let Some(v) = &args.$field {
                    self.$field = Some(v.clone());
                }
            };
        }
        take!(out);
        take!(train_file);
        take!(validation_file);
        take!(test_file);
        take!(vocab);
        take!(lexicon);
        take!(checkpoint);
        take!(input);
        take!(seed);
        take!(stage);
        take!(k);
        take!(epochs);
        take!(batch_size);
        take!(learning_rate);
        take!(num_layers);
        take!(hidden);
        take!(num_heads);
        take!(ff_dim);
        take!(max_len);
        take!(dropout);
        take!(bucket_width);
        take!(audit_tolerance);
        if let Some(v) = &args.taxonomy {
            self.taxonomy = Some(Source::parse(v));
        }
        if let Some(v) = &args.stopwords {
            self.stopwords = Some(Source::parse(v));
        }
        if let Some(v) = &args.filter_mode {
            self.filter_mode = Some(FilterModeSetting::parse(v)?);
        }
        if let Some(v) = &args.train_mode {
            self.train_mode = Some(parse_train_mode(v)?);
        }
        if args.deterministic {
            self.deterministic = Some(true);
        }
        if args.cache_features {
            self.cache_features = Some(true);
        }
        Ok(())
    }
}

/// Applies precedence (flags over config file over defaults), loads the
/// taxonomy and stopword list, and verifies a recorded stopword hash if the
/// config file carried one.
pub fn resolve(args: &CommonArgs) -> Result<Resolved> {
    let mut builder = Builder::default();
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config file {}", path.display()))?;
        builder.apply_file(&text, path)?;
    }
    builder.apply_flags(args)?;

    let stage_index = builder.stage.unwrap_or(3);
    let stage = PipelineStage::from_index(stage_index)
        .ok_or_else(|| anyhow!("stage must be 1, 2, or 3, got {stage_index}"))?;
    let train_mode = builder.train_mode.unwrap_or(TrainMode::FrozenHead);
    let learning_rate = builder.learning_rate.unwrap_or(match train_mode {
        TrainMode::FrozenHead => DEFAULT_HEAD_LEARNING_RATE,
        TrainMode::FullFineTune => DEFAULT_FULL_LEARNING_RATE,
    });

    let taxonomy_source = builder.taxonomy.unwrap_or(Source::Builtin);
    let taxonomy = match &taxonomy_source {
        Source::Builtin => Taxonomy::bundled(),
        Source::File(path) => {
            Taxonomy::load(path).with_context(|| format!("loading taxonomy {}", path.display()))?
        }
    };
    let stopwords_source = builder.stopwords.unwrap_or(Source::Builtin);
    let stopwords = match &stopwords_source {
        Source::Builtin => StopwordList::bundled(),
        Source::File(path) => StopwordList::load(path)
            .with_context(|| format!("loading stopword list {}", path.display()))?,
    };
    if let Some(expected) = &builder.stopwords_sha256 {
        let actual = stopwords.sha256_hex();
        if actual != expected {
            bail!(
                "stopword list hash mismatch: config records {expected}, \
                 resolved list hashes to {actual}"
            );
        }
    }

    Ok(Resolved {
        out: builder.out.unwrap_or_else(|| PathBuf::from("out")),
        train_file: builder.train_file,
        validation_file: builder.validation_file,
        test_file: builder.test_file,
        taxonomy_source,
        stopwords_source,
        vocab: builder.vocab,
        lexicon: builder.lexicon,
        checkpoint: builder.checkpoint,
        input: builder.input,
        seed: builder.seed.unwrap_or(42),
        stage,
        filter_mode: builder.filter_mode.unwrap_or(FilterModeSetting::Union),
        k: builder.k.unwrap_or(100),
        epochs: builder.epochs.unwrap_or(DEFAULT_EPOCHS),
        batch_size: builder.batch_size.unwrap_or(DEFAULT_BATCH_SIZE),
        learning_rate,
        train_mode,
        num_layers: builder.num_layers.unwrap_or(2),
        hidden: builder.hidden.unwrap_or(64),
        num_heads: builder.num_heads.unwrap_or(4),
        ff_dim: builder.ff_dim.unwrap_or(256),
        max_len: builder.max_len.unwrap_or(128),
        dropout: builder.dropout.unwrap_or(0.2),
        bucket_width: builder.bucket_width.unwrap_or(50),
        audit_tolerance: builder.audit_tolerance.unwrap_or(0.01),
        deterministic: builder.deterministic.unwrap_or(false),
        cache_features: builder.cache_features.unwrap_or(false),
        taxonomy,
        stopwords,
    })
}

impl Resolved {
    /// Encoder dimensions from the resolved settings; the vocabulary size
    /// comes from the loaded WordPiece file and the class count from the
    /// taxonomy.
    pub fn encoder_config(&self, vocab_size: usize) -> Result<EncoderConfig> {
        let config = EncoderConfig {
            max_len: self.max_len,
            num_classes: self.taxonomy.num_classes(),
            dropout: self.dropout,
            ..EncoderConfig::new(
                self.num_layers,
                self.hidden,
                self.num_heads,
                self.ff_dim,
                vocab_size,
            )
        };
        config.validate()?;
        Ok(config)
    }

    pub fn train_config(&self) -> TrainConfig {
        let base = match self.train_mode {
            TrainMode::FrozenHead => TrainConfig::frozen_head(self.seed),
            TrainMode::FullFineTune => TrainConfig::full_fine_tune(self.seed),
        };
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            feature_cache: self.cache_features,
            ..base
        }
    }

    pub fn uses_filter(&self) -> bool {
        self.stage == PipelineStage::LowercaseStripFilter
    }

    pub fn oracle_active(&self) -> bool {
        self.uses_filter() && self.filter_mode == FilterModeSetting::Oracle
    }

    /// The fully explicit `key=value` serialization, keys sorted, ending in a
    /// newline. Unset paths are omitted; every scalar is materialized.
    pub fn file_string(&self) -> String {
        let mut entries: BTreeMap<&str, String> = BTreeMap::new();
        entries.insert("out", self.out.display().to_string());
        if let Some(p) = &self.train_file {
            entries.insert("train_file", p.display().to_string());
        }
        if let Some(p) = &self.validation_file {
            entries.insert("validation_file", p.display().to_string());
        }
        if let Some(p) = &self.test_file {
            entries.insert("test_file", p.display().to_string());
        }
        entries.insert("taxonomy", self.taxonomy_source.render());
        entries.insert("stopwords", self.stopwords_source.render());
        entries.insert("stopwords_sha256", self.stopwords.sha256_hex().to_string());
        if let Some(p) = &self.vocab {
            entries.insert("vocab", p.display().to_string());
        }
        if let Some(p) = &self.lexicon {
            entries.insert("lexicon", p.display().to_string());
        }
        if let Some(p) = &self.checkpoint {
            entries.insert("checkpoint", p.display().to_string());
        }
        if let Some(p) = &self.input {
            entries.insert("input", p.display().to_string());
        }
        entries.insert("seed", self.seed.to_string());
        entries.insert("stage", self.stage.index().to_string());
        entries.insert("filter_mode", self.filter_mode.as_str().to_string());
        entries.insert("k", self.k.to_string());
        entries.insert("epochs", self.epochs.to_string());
        entries.insert("batch_size", self.batch_size.to_string());
        entries.insert("learning_rate", self.learning_rate.to_string());
        let mode = match self.train_mode {
            TrainMode::FrozenHead => "frozen",
            TrainMode::FullFineTune => "full",
        };
        entries.insert("train_mode", mode.to_string());
        entries.insert("num_layers", self.num_layers.to_string());
        entries.insert("hidden", self.hidden.to_string());
        entries.insert("num_heads", self.num_heads.to_string());
        entries.insert("ff_dim", self.ff_dim.to_string());
        entries.insert("max_len", self.max_len.to_string());
        entries.insert("dropout", self.dropout.to_string());
        entries.insert("bucket_width", self.bucket_width.to_string());
        entries.insert("audit_tolerance", self.audit_tolerance.to_string());
        entries.insert("deterministic", self.deterministic.to_string());
        entries.insert("cache_features", self.cache_features.to_string());
        let mut out = String::new();
        for (key, value) in entries {
            let _ = writeln!(out, "{key}={value}");
        }
        out
    }
}

/// Fetches a path that the current command cannot run without.
pub fn require<'a>(path: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| anyhow!("missing required {flag}"))
}
