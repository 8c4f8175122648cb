use std::collections::{BTreeSet, HashMap};

use unicode_general_category::{get_general_category, GeneralCategory};

use super::Sentence;
use crate::error::{Error, Result};

/// Surface shape of a token.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Casing {
    AllLower,
    AllUpper,
    InitialUpper,
    Numeric,
    MainlyNumeric,
    ContainsDigit,
    Other,
}

impl Casing {
    pub const COUNT: usize = 7;

    pub const ALL: [Casing; 7] = [
        Casing::AllLower,
        Casing::AllUpper,
        Casing::InitialUpper,
        Casing::Numeric,
        Casing::MainlyNumeric,
        Casing::ContainsDigit,
        Casing::Other,
    ];

    pub fn index(self) -> usize {
        Casing::ALL.iter().position(|&c| c == self).unwrap()
    }

    pub fn one_hot(self) -> [f64; 7] {
        let mut v = [0.0; 7];
        v[self.index()] = 1.0;
        v
    }
}

fn is_digit(c: char) -> bool {
    get_general_category(c) == GeneralCategory::DecimalNumber
}

/// Classifies a token by the first matching rule: numeric, mainly numeric
/// (more than half digits), all lower, all upper, initial upper (first
/// character upper case, no upper case after it), contains digit, other.
///
/// "All lower" and "all upper" require at least one cased letter and
/// ignore uncased characters.
pub fn extract_casing_feature(token: &str) -> Casing {
    let chars: Vec<char> = token.chars().collect();
    let digits = chars.iter().filter(|&&c| is_digit(c)).count();
    let upper = chars.iter().filter(|c| c.is_uppercase()).count();
    let lower = chars.iter().filter(|c| c.is_lowercase()).count();
    if !chars.is_empty() && digits == chars.len() {
        Casing::Numeric
    } else if digits * 2 > chars.len() {
        Casing::MainlyNumeric
    } else if lower > 0 && upper == 0 {
        Casing::AllLower
    } else if upper > 0 && lower == 0 {
        Casing::AllUpper
    } else if chars.first().is_some_and(|c| c.is_uppercase()) && upper == 1 {
        Casing::InitialUpper
    } else if digits > 0 {
        Casing::ContainsDigit
    } else {
        Casing::Other
    }
}

pub const CHAR_PAD: usize = 0;
pub const CHAR_UNK: usize = 1;
pub const SENT_START: usize = 2;
pub const SENT_END: usize = 3;
pub const WORD_START: usize = 4;
pub const WORD_END: usize = 5;
const FIRST_CHAR: usize = 6;

/// Character inventory: padding, unknown, the four boundary symbols
/// `<S>`, `</S>`, `<W>`, `</W>`, then every character seen in training.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CharVocab {
    chars: Vec<char>,
    index: HashMap<char, usize>,
}

impl CharVocab {
    /// Collects characters from training sentences, in code point order.
    pub fn build(sentences: &[Sentence]) -> Self {
        let set: BTreeSet<char> = sentences
            .iter()
            .flat_map(|s| s.tokens.iter())
            .flat_map(|t| t.chars())
            .collect();
        CharVocab::from_chars(set)
    }

    pub fn from_chars(chars: impl IntoIterator<Item = char>) -> Self {
        let mut seen = BTreeSet::new();
        let chars: Vec<char> = chars.into_iter().filter(|c| seen.insert(*c)).collect();
        let index = chars.iter().enumerate().map(|(i, &c)| (c, i + FIRST_CHAR)).collect();
        CharVocab { chars, index }
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    /// Table size including the reserved entries.
    pub fn len(&self) -> usize {
        self.chars.len() + FIRST_CHAR
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn index(&self, c: char) -> usize {
        self.index.get(&c).copied().unwrap_or(CHAR_UNK)
    }
}

/// How character sequences are decorated and padded.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CharMode {
    /// `<W>` … `</W>` around each word, `<S>` before the first word and
    /// `</S>` after the last, padded at the end.
    Cnn,
    /// Raw characters padded at the front.
    Rnn,
}

/// Length of a token's sequence before padding.
pub fn decorated_len(token: &str, position: usize, sentence_len: usize, mode: CharMode) -> usize {
    let n = token.chars().count();
    match mode {
        CharMode::Rnn => n,
        CharMode::Cnn => n + 2 + usize::from(position == 0) + usize::from(position + 1 == sentence_len),
    }
}

/// Per-token character index sequences, each exactly `pad_len` long.
pub fn build_char_sequences<S: AsRef<str>>(
    tokens: &[S],
    vocab: &CharVocab,
    mode: CharMode,
    pad_len: usize,
) -> Result<Vec<Vec<usize>>> {
    let n = tokens.len();
    tokens
        .iter()
        .enumerate()
        .map(|(i, tok)| {
            let tok = tok.as_ref();
            let need = decorated_len(tok, i, n, mode);
            if need > pad_len {
                return Err(Error::InvalidArgument(format!(
                    "pad length {pad_len} is shorter than token `{tok}` ({need})"
                )));
            }
            let chars = tok.chars().map(|c| vocab.index(c));
            let seq = match mode {
                CharMode::Rnn => std::iter::repeat_n(CHAR_PAD, pad_len - need).chain(chars).collect(),
                CharMode::Cnn => {
                    let mut v = Vec::with_capacity(pad_len);
                    if i == 0 {
                        v.push(SENT_START);
                    }
                    v.push(WORD_START);
                    v.extend(chars);
                    v.push(WORD_END);
                    if i + 1 == n {
                        v.push(SENT_END);
                    }
                    v.resize(pad_len, CHAR_PAD);
                    v
                }
            };
            Ok(seq)
        })
        .collect()
}
