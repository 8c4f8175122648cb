//! Pre-trained word vectors with backend-specific handling of unknown words.
//!
//! Two on-disk formats are read:
//!
//! * plain text (word2vec, word2vecf and GloVe exports): an optional
//!   `count dim` header, then `word v₁ … v_dim` per line;
//! * `FTXT1` subword stores: a header line
//!   `FTXT1 dim min_n max_n bucket_count word_count`, `word_count` word
//!   lines as above, then `bucket_count` lines of `dim` n-gram bucket values.
//!
//! A subword store infers vectors for unknown words by averaging the bucket
//! rows of the word's hashed character n-grams, the same way fastText does.
//! Native fastText `.bin` models are converted with [`read_fasttext_bin`].

mod fasttext_bin;
mod subword;

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use log::warn;

use crate::error::{Error, Result};

pub use fasttext_bin::read_fasttext_bin;
pub use subword::{extract_char_ngrams, fasttext_hash, ngram_count};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingKind {
    Plain,
    #[serde(rename = "fasttext")]
    FastText,
}

/// Hashed character n-gram vectors of a subword model.
#[derive(Clone, Debug, PartialEq)]
pub struct SubwordBuckets {
    pub min_n: usize,
    pub max_n: usize,
    pub bucket_count: usize,
    /// `[bucket_count, dim]`, row-major.
    pub rows: Vec<f32>,
}

/// Word → vector map. Immutable once loaded.
#[derive(Clone, Debug)]
pub struct EmbeddingStore {
    dim: usize,
    index: HashMap<String, usize>,
    words: Vec<String>,
    vectors: Vec<f32>,
    subwords: Option<SubwordBuckets>,
    duplicates: usize,
}

const FTXT_MAGIC: &str = "FTXT1";

impl EmbeddingStore {
    /// Empty plain store of the given dimension.
    pub fn new(dim: usize) -> Self {
        EmbeddingStore {
            dim,
            index: HashMap::new(),
            words: Vec::new(),
            vectors: Vec::new(),
            subwords: None,
            duplicates: 0,
        }
    }

    /// Store with subword inference.
    pub fn with_subwords(dim: usize, buckets: SubwordBuckets) -> Result<Self> {
        if buckets.min_n == 0 || buckets.min_n > buckets.max_n || buckets.bucket_count == 0 {
            return Err(Error::InvalidArgument(format!(
                "subword store needs 0 < min_n <= max_n and buckets > 0, got {}..{} with {}",
                buckets.min_n, buckets.max_n, buckets.bucket_count
            )));
        }
        if buckets.rows.len() != buckets.bucket_count * dim {
            return Err(Error::shape(
                "subword buckets",
                format!("{} values", buckets.bucket_count * dim),
                format!("{}", buckets.rows.len()),
            ));
        }
        let mut s = EmbeddingStore::new(dim);
        s.subwords = Some(buckets);
        Ok(s)
    }

    /// Adds a word; returns `false` (and keeps the first vector) for duplicates.
    pub fn insert(&mut self, word: &str, vector: &[f32]) -> Result<bool> {
        if vector.len() != self.dim {
            return Err(Error::shape("embedding insert", format!("{} values", self.dim), format!("{}", vector.len())));
        }
        if self.index.contains_key(word) {
            self.duplicates += 1;
            return Ok(false);
        }
        self.index.insert(word.to_string(), self.words.len());
        self.words.push(word.to_string());
        self.vectors.extend_from_slice(vector);
        Ok(true)
    }

    pub fn kind(&self) -> EmbeddingKind {
        if self.subwords.is_some() {
            EmbeddingKind::FastText
        } else {
            EmbeddingKind::Plain
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Number of repeated words ignored while loading.
    pub fn duplicates(&self) -> usize {
        self.duplicates
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.words.iter().map(String::as_str)
    }

    pub fn subwords(&self) -> Option<&SubwordBuckets> {
        self.subwords.as_ref()
    }

    /// Exact membership in the word list. Subword inferability does not
    /// count, and no case folding is applied.
    pub fn vocab_contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn stored_vector(&self, word: &str) -> Option<&[f32]> {
        self.index
            .get(word)
            .map(|&i| &self.vectors[i * self.dim..(i + 1) * self.dim])
    }

    /// Vector for `word` and whether it was out of vocabulary.
    ///
    /// Unknown words get the mean of their n-gram bucket rows on a subword
    /// store and the zero vector otherwise.
    pub fn lookup_word(&self, word: &str) -> (Vec<f64>, bool) {
        if let Some(v) = self.stored_vector(word) {
            return (v.iter().map(|&x| x as f64).collect(), false);
        }
        let mut out = vec![0.0; self.dim];
        if let Some(sub) = &self.subwords {
            if !word.is_empty() {
                let grams = extract_char_ngrams(word, sub.min_n, sub.max_n);
                for gram in &grams {
                    let row = fasttext_hash(gram) as usize % sub.bucket_count;
                    for (o, &x) in out.iter_mut().zip(&sub.rows[row * self.dim..(row + 1) * self.dim]) {
                        *o += x as f64;
                    }
                }
                if !grams.is_empty() {
                    let n = grams.len() as f64;
                    out.iter_mut().for_each(|x| *x /= n);
                }
            }
        }
        (out, true)
    }

    /// Loads either format, deciding by the first line.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut reader = open(path)?;
        let mut first = String::new();
        reader.read_line(&mut first).map_err(|e| Error::io(path, e))?;
        let name = path.display().to_string();
        if first.starts_with(FTXT_MAGIC) {
            read_fasttext_text(first, reader, &name)
        } else {
            read_text_vectors(Some(first), reader, &name, None)
        }
    }

    /// Loads a plain text vector file.
    pub fn load_text_vectors(path: impl AsRef<Path>, expected_dim: Option<usize>) -> Result<Self> {
        let path = path.as_ref();
        let reader = open(path)?;
        read_text_vectors(None, reader, &path.display().to_string(), expected_dim)
    }

    pub fn from_text_reader(reader: impl BufRead, expected_dim: Option<usize>) -> Result<Self> {
        read_text_vectors(None, reader, "<input>", expected_dim)
    }

    /// Writes the plain text format with a `count dim` header.
    pub fn write_text(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "{} {}", self.len(), self.dim)?;
        self.write_word_lines(&mut w)
    }

    /// Writes the `FTXT1` format. Fails on stores without subwords.
    pub fn write_fasttext(&self, mut w: impl Write) -> Result<()> {
        let sub = self
            .subwords
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("store has no subword buckets".into()))?;
        let io = |e| Error::io("<output>", e);
        writeln!(
            w,
            "{FTXT_MAGIC} {} {} {} {} {}",
            self.dim,
            sub.min_n,
            sub.max_n,
            sub.bucket_count,
            self.len()
        )
        .map_err(io)?;
        self.write_word_lines(&mut w).map_err(io)?;
        for row in sub.rows.chunks(self.dim) {
            write_values(&mut w, row).map_err(io)?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        match self.kind() {
            EmbeddingKind::FastText => self.write_fasttext(&mut w)?,
            EmbeddingKind::Plain => self.write_text(&mut w).map_err(|e| Error::io(path, e))?,
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    fn write_word_lines(&self, w: &mut impl Write) -> std::io::Result<()> {
        for (i, word) in self.words.iter().enumerate() {
            write!(w, "{word} ")?;
            write_values(w, &self.vectors[i * self.dim..(i + 1) * self.dim])?;
        }
        Ok(())
    }
}

fn write_values(w: &mut impl Write, values: &[f32]) -> std::io::Result<()> {
    let mut first = true;
    for v in values {
        if !first {
            w.write_all(b" ")?;
        }
        write!(w, "{v}")?;
        first = false;
    }
    w.write_all(b"\n")
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn parse_err(path: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_string(),
        line,
        message: message.into(),
    }
}

fn parse_values(fields: &[&str], path: &str, line: usize) -> Result<Vec<f32>> {
    fields
        .iter()
        .map(|f| {
            f.parse::<f32>()
                .map_err(|_| parse_err(path, line, format!("invalid number `{f}`")))
        })
        .collect()
}

fn read_text_vectors(
    first: Option<String>,
    mut reader: impl BufRead,
    path: &str,
    expected_dim: Option<usize>,
) -> Result<EmbeddingStore> {
    let mut dim = expected_dim;
    let mut store: Option<EmbeddingStore> = None;
    let mut line_no = 0;
    let mut buf = String::new();
    let mut pending = first;
    loop {
        let line = match pending.take() {
            Some(l) => l,
            None => {
                buf.clear();
                if reader.read_line(&mut buf).map_err(|e| Error::io(path, e))? == 0 {
                    break;
                }
                std::mem::take(&mut buf)
            }
        };
        line_no += 1;
        let fields: Vec<&str> = line.split_ascii_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if line_no == 1 && fields.len() == 2 {
            if let (Ok(_), Ok(d)) = (fields[0].parse::<usize>(), fields[1].parse::<usize>()) {
                if let Some(e) = expected_dim {
                    if e != d {
                        return Err(parse_err(path, line_no, format!("header dimension {d}, expected {e}")));
                    }
                }
                dim = Some(d);
                continue;
            }
        }
        let values = parse_values(&fields[1..], path, line_no)?;
        let d = *dim.get_or_insert(values.len());
        if values.len() != d || d == 0 {
            return Err(parse_err(
                path,
                line_no,
                format!("expected {d} values, found {}", values.len()),
            ));
        }
        let s = store.get_or_insert_with(|| EmbeddingStore::new(d));
        s.insert(fields[0], &values)?;
    }
    let store = store.unwrap_or_else(|| EmbeddingStore::new(dim.unwrap_or(0)));
    if store.duplicates > 0 {
        warn!("{path}: ignored {} duplicate words", store.duplicates);
    }
    Ok(store)
}

fn read_fasttext_text(header: String, mut reader: impl BufRead, path: &str) -> Result<EmbeddingStore> {
    let fields: Vec<&str> = header.split_ascii_whitespace().collect();
    let nums: Vec<usize> = fields[1..]
        .iter()
        .map(|f| f.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| parse_err(path, 1, "malformed FTXT1 header"))?;
    if fields[0] != FTXT_MAGIC || nums.len() != 5 {
        return Err(parse_err(path, 1, "expected `FTXT1 dim min_n max_n bucket_count word_count`"));
    }
    let (dim, min_n, max_n, buckets, word_count) = (nums[0], nums[1], nums[2], nums[3], nums[4]);
    let mut store = EmbeddingStore::with_subwords(
        dim,
        SubwordBuckets {
            min_n,
            max_n,
            bucket_count: buckets,
            rows: vec![0.0; buckets * dim],
        },
    )?;
    let mut line = String::new();
    let mut line_no = 1;
    let mut next_line = |line: &mut String, line_no: &mut usize| -> Result<()> {
        line.clear();
        *line_no += 1;
        if reader.read_line(line).map_err(|e| Error::io(path, e))? == 0 {
            return Err(parse_err(path, *line_no, "unexpected end of file"));
        }
        Ok(())
    };
    for _ in 0..word_count {
        next_line(&mut line, &mut line_no)?;
        let fields: Vec<&str> = line.split_ascii_whitespace().collect();
        let values = parse_values(fields.get(1..).unwrap_or(&[]), path, line_no)?;
        if values.len() != dim {
            return Err(parse_err(path, line_no, format!("expected {dim} values, found {}", values.len())));
        }
        store.insert(fields[0], &values)?;
    }
    let mut rows = Vec::with_capacity(buckets * dim);
    for _ in 0..buckets {
        next_line(&mut line, &mut line_no)?;
        let fields: Vec<&str> = line.split_ascii_whitespace().collect();
        let values = parse_values(&fields, path, line_no)?;
        if values.len() != dim {
            return Err(parse_err(path, line_no, format!("expected {dim} values, found {}", values.len())));
        }
        rows.extend(values);
    }
    store.subwords.as_mut().unwrap().rows = rows;
    if store.duplicates > 0 {
        warn!("{path}: ignored {} duplicate words", store.duplicates);
    }
    Ok(store)
}
