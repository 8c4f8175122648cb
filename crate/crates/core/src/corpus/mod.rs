//! Corpus readers and writers, label schemas, token features and batching.
//!
//! Two file formats are supported. GermEval files are tab separated with
//! a token number, the token, the outer label and the inner label:
//!
//! ```text
//! # http://example.org/article [2009-10-17]
//! 1    Real    B-ORG    O
//! 2    Madrid    I-ORG    B-LOC
//! ```
//!
//! CoNLL files are whitespace separated with the token first and the
//! entity tag last. Labels are returned as written (usually IOB); use
//! [`iob_to_bio`] to convert.

mod batch;
mod features;
mod labels;

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

pub use batch::{make_batches, Batch};
pub use features::{
    build_char_sequences, decorated_len, extract_casing_feature, Casing, CharMode, CharVocab, CHAR_PAD,
    CHAR_UNK, SENT_END, SENT_START, WORD_END, WORD_START,
};
pub use labels::{iob_to_bio, LabelSchema, Prefix, Tag};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sentence {
    pub tokens: Vec<String>,
    pub outer_labels: Vec<String>,
    pub inner_labels: Option<Vec<String>>,
    pub source_id: String,
}

impl Sentence {
    pub fn new(tokens: Vec<String>, outer_labels: Vec<String>) -> Self {
        Sentence {
            tokens,
            outer_labels,
            inner_labels: None,
            source_id: String::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

fn parse_error(source: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: source.to_string(),
        line,
        message: message.into(),
    }
}

fn check_label(schema: &LabelSchema, label: &str, source: &str, line: usize) -> Result<()> {
    schema
        .validate(label)
        .map_err(|_| parse_error(source, line, format!("unknown label `{label}` for schema {}", schema.name())))
}

/// Reads a GermEval file, validating labels against the GermEval schema.
pub fn parse_germeval(path: impl AsRef<Path>) -> Result<Vec<Sentence>> {
    let path = path.as_ref();
    parse_germeval_reader(open(path)?, &path.display().to_string(), &LabelSchema::germeval())
}

/// Reads GermEval-formatted text. The most recent `#` comment before a
/// sentence becomes its `source_id`; sentences without one are numbered.
pub fn parse_germeval_reader(reader: impl BufRead, source: &str, schema: &LabelSchema) -> Result<Vec<Sentence>> {
    let mut out = Vec::new();
    let mut cur = Sentence::new(Vec::new(), Vec::new());
    let mut inner = Vec::new();
    let mut comment: Option<String> = None;
    let flush = |cur: &mut Sentence, inner: &mut Vec<String>, comment: &mut Option<String>, out: &mut Vec<Sentence>| {
        if !cur.tokens.is_empty() {
            let mut s = std::mem::replace(cur, Sentence::new(Vec::new(), Vec::new()));
            s.inner_labels = Some(std::mem::take(inner));
            s.source_id = comment.take().unwrap_or_else(|| format!("{source}:{}", out.len()));
            out.push(s);
        }
    };
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| parse_error(source, lineno, e.to_string()))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            flush(&mut cur, &mut inner, &mut comment, &mut out);
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            flush(&mut cur, &mut inner, &mut comment, &mut out);
            comment = Some(rest.trim().to_string());
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(parse_error(source, lineno, format!("expected 4 tab-separated columns, found {}", cols.len())));
        }
        if cols[1].is_empty() {
            return Err(parse_error(source, lineno, "empty token"));
        }
        check_label(schema, cols[2], source, lineno)?;
        check_label(schema, cols[3], source, lineno)?;
        cur.tokens.push(cols[1].to_string());
        cur.outer_labels.push(cols[2].to_string());
        inner.push(cols[3].to_string());
    }
    flush(&mut cur, &mut inner, &mut comment, &mut out);
    Ok(out)
}

/// Reads a CoNLL 2003 file, validating labels against the CoNLL classes.
/// Files that are not valid UTF-8 are decoded as ISO-8859-1, the encoding
/// of the original German release.
pub fn parse_conll03(path: impl AsRef<Path>) -> Result<Vec<Sentence>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = decode_utf8_or_latin1(bytes);
    parse_conll03_reader(text.as_bytes(), &path.display().to_string(), &LabelSchema::conll())
}

pub fn decode_utf8_or_latin1(bytes: Vec<u8>) -> String {
    match String::from_utf8(bytes) {
        Ok(s) => s,
        Err(e) => e.into_bytes().into_iter().map(char::from).collect(),
    }
}

/// Reads CoNLL-formatted text. `-DOCSTART-` sentences are dropped; the
/// remaining ones are numbered in order as `source:n`.
pub fn parse_conll03_reader(reader: impl BufRead, source: &str, schema: &LabelSchema) -> Result<Vec<Sentence>> {
    let mut out = Vec::new();
    let mut cur = Sentence::new(Vec::new(), Vec::new());
    let mut width = None;
    let flush = |cur: &mut Sentence, width: &mut Option<usize>, out: &mut Vec<Sentence>| {
        *width = None;
        let s = std::mem::replace(cur, Sentence::new(Vec::new(), Vec::new()));
        if !s.tokens.is_empty() && s.tokens[0] != "-DOCSTART-" {
            out.push(Sentence {
                source_id: format!("{source}:{}", out.len()),
                ..s
            });
        }
    };
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| parse_error(source, lineno, e.to_string()))?;
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.is_empty() {
            flush(&mut cur, &mut width, &mut out);
            continue;
        }
        if cols.len() < 2 {
            return Err(parse_error(source, lineno, "expected a token and a tag"));
        }
        match width {
            Some(w) if w != cols.len() => {
                return Err(parse_error(source, lineno, format!("expected {w} columns, found {}", cols.len())))
            }
            _ => width = Some(cols.len()),
        }
        let label = cols[cols.len() - 1];
        if cols[0] != "-DOCSTART-" {
            check_label(schema, label, source, lineno)?;
        }
        cur.tokens.push(cols[0].to_string());
        cur.outer_labels.push(label.to_string());
    }
    flush(&mut cur, &mut width, &mut out);
    Ok(out)
}

/// Writes sentences in GermEval format, preceded by their `source_id` as a
/// comment. A missing inner level is written as `O`.
pub fn write_germeval(mut w: impl Write, sentences: &[Sentence]) -> std::io::Result<()> {
    for s in sentences {
        writeln!(w, "# {}", s.source_id)?;
        for (i, (tok, outer)) in s.tokens.iter().zip(&s.outer_labels).enumerate() {
            let inner = s.inner_labels.as_ref().map_or("O", |l| l[i].as_str());
            writeln!(w, "{}\t{tok}\t{outer}\t{inner}", i + 1)?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Writes `token label` lines with blank-line sentence separation.
pub fn write_conll(mut w: impl Write, sentences: &[Sentence]) -> std::io::Result<()> {
    for s in sentences {
        for (tok, label) in s.tokens.iter().zip(&s.outer_labels) {
            writeln!(w, "{tok} {label}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}
