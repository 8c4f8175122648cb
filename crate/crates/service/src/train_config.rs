//! The `train` subcommand's configuration file and corpus preparation.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use ner_core::corpus::{iob_to_bio, parse_conll03, parse_germeval, LabelSchema, Sentence};
use ner_core::embeddings::{read_fasttext_bin, EmbeddingKind, EmbeddingStore};
use ner_core::model::{CharVariant, ModelConfig};
use ner_core::training::TrainConfig;
use ner_core::{Error, Result};
use serde::Deserialize;

use crate::mapping::map_sentence_combined;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Germeval,
    Conll,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelLevel {
    #[default]
    Outer,
    Inner,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSource {
    pub format: CorpusFormat,
    pub train: PathBuf,
    pub dev: PathBuf,
    #[serde(default)]
    pub test: Option<PathBuf>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingSource {
    pub path: PathBuf,
    #[serde(default)]
    pub kind: Option<EmbeddingKind>,
}

/// Optional overrides of the model defaults for the chosen char variant.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelOverrides {
    pub casing_dim: Option<usize>,
    pub char_emb_dim: Option<usize>,
    pub char_cnn_filters: Option<usize>,
    pub char_cnn_kernels: Option<Vec<usize>>,
    pub char_lstm_cells: Option<usize>,
    pub token_lstm_cells: Option<usize>,
    pub dropout: Option<f64>,
    pub recurrent_dropout: Option<f64>,
}

/// ```toml
/// schema = "germeval"        # germeval | conll | combined
/// level = "outer"            # GermEval annotation level to learn
/// char_variant = "bilstm"
/// output = "germeval-outer.mner"
///
/// [[corpus]]
/// format = "germeval"
/// train = "data/train.tsv"
/// dev = "data/dev.tsv"
///
/// [embeddings]
/// path = "vectors/de.ftxt"
///
/// [model]
/// token_lstm_cells = 100
///
/// [training]
/// stage1_epochs = 5
/// ```
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFile {
    pub schema: String,
    #[serde(default)]
    pub level: LabelLevel,
    pub char_variant: String,
    pub output: PathBuf,
    #[serde(default)]
    pub report: Option<PathBuf>,
    #[serde(default)]
    pub model_seed: Option<u64>,
    pub corpus: Vec<CorpusSource>,
    pub embeddings: EmbeddingSource,
    #[serde(default)]
    pub model: ModelOverrides,
    #[serde(default)]
    pub training: TrainConfig,
}

impl TrainFile {
    /// Reads a config file; relative paths are taken relative to it.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: TrainFile = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: e.span().map(|s| text[..s.start].lines().count().max(1)).unwrap_or(0),
            message: e.message().to_string(),
        })?;
        if let Some(dir) = path.parent() {
            let fix = |p: &mut PathBuf| *p = dir.join(&*p);
            for c in &mut cfg.corpus {
                fix(&mut c.train);
                fix(&mut c.dev);
                if let Some(t) = c.test.as_mut() {
                    fix(t);
                }
            }
            fix(&mut cfg.embeddings.path);
            fix(&mut cfg.output);
            if let Some(r) = cfg.report.as_mut() {
                fix(r);
            }
            if let Some(d) = cfg.training.checkpoint_dir.as_mut() {
                fix(d);
            }
        }
        if cfg.corpus.is_empty() {
            return Err(Error::InvalidArgument("at least one [[corpus]] is required".into()));
        }
        Ok(cfg)
    }

    pub fn label_schema(&self) -> Result<LabelSchema> {
        LabelSchema::by_name(&self.schema)
    }

    pub fn model_config(&self, word_dim: usize, embedding_kind: EmbeddingKind) -> Result<ModelConfig> {
        let variant: CharVariant = self.char_variant.parse()?;
        let mut c = ModelConfig::new(variant, self.label_schema()?);
        c.word_dim = word_dim;
        c.embedding_kind = embedding_kind;
        let o = &self.model;
        macro_rules! apply {
            ($($f:ident),*) => { $( if let Some(v) = o.$f.clone() { c.$f = v; } )* };
        }
        apply!(
            casing_dim,
            char_emb_dim,
            char_cnn_filters,
            char_cnn_kernels,
            char_lstm_cells,
            token_lstm_cells,
            dropout,
            recurrent_dropout
        );
        c.validate()?;
        Ok(c)
    }
}

/// Loads word vectors. `.bin` files are read as fastText binary models;
/// anything else goes through [`EmbeddingStore::load`].
pub fn load_embeddings(path: &Path, kind: Option<EmbeddingKind>) -> Result<EmbeddingStore> {
    let store = if path.extension().is_some_and(|e| e == "bin") {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        read_fasttext_bin(BufReader::new(f))?
    } else {
        EmbeddingStore::load(path)?
    };
    if let Some(k) = kind {
        if k != store.kind() {
            return Err(Error::InvalidArgument(format!(
                "{} holds {:?} vectors, config says {:?}",
                path.display(),
                store.kind(),
                k
            )));
        }
    }
    Ok(store)
}

/// Reads one split and rewrites its labels for the target schema: the
/// chosen GermEval level becomes `outer_labels`, CoNLL IOB is converted to
/// BIO, and the combined schema maps GermEval sub-classes.
pub fn load_split(path: &Path, format: CorpusFormat, level: LabelLevel, schema: &LabelSchema) -> Result<Vec<Sentence>> {
    let mut sentences = match format {
        CorpusFormat::Germeval => parse_germeval(path)?,
        CorpusFormat::Conll => parse_conll03(path)?,
    };
    for s in &mut sentences {
        prepare_sentence(s, format, level, schema)?;
    }
    Ok(sentences)
}

pub fn prepare_sentence(s: &mut Sentence, format: CorpusFormat, level: LabelLevel, schema: &LabelSchema) -> Result<()> {
    let mut labels = match (format, level) {
        (CorpusFormat::Germeval, LabelLevel::Inner) => s
            .inner_labels
            .clone()
            .ok_or_else(|| Error::InvalidArgument(format!("sentence {} has no inner level", s.source_id)))?,
        (CorpusFormat::Germeval, LabelLevel::Outer) => s.outer_labels.clone(),
        (CorpusFormat::Conll, _) => iob_to_bio(&s.outer_labels)?,
    };
    if schema.name() == "combined" && format == CorpusFormat::Germeval {
        labels = map_sentence_combined(&labels)?;
    }
    for l in &labels {
        if !schema.contains(l) {
            return Err(Error::InvalidArgument(format!(
                "label `{l}` in {} is not part of the {} schema",
                s.source_id,
                schema.name()
            )));
        }
    }
    s.outer_labels = labels;
    s.inner_labels = None;
    Ok(())
}
