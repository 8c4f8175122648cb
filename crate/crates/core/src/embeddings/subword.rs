/// Character n-grams of the boundary-marked word `<word>`, over Unicode
/// scalar values, grouped by length (shortest first) and left to right
/// within a length. The whole marked word is included when it is no longer
/// than `max_n`.
pub fn extract_char_ngrams(word: &str, min_n: usize, max_n: usize) -> Vec<String> {
    let marked: Vec<char> = std::iter::once('<').chain(word.chars()).chain(std::iter::once('>')).collect();
    let mut out = Vec::with_capacity(ngram_count(marked.len(), min_n, max_n));
    for n in min_n.max(1)..=max_n.min(marked.len()) {
        for window in marked.windows(n) {
            out.push(window.iter().collect());
        }
    }
    out
}

/// Number of n-grams [`extract_char_ngrams`] yields for a marked word of
/// `marked_len` characters.
pub fn ngram_count(marked_len: usize, min_n: usize, max_n: usize) -> usize {
    (min_n.max(1)..=max_n.min(marked_len)).map(|n| marked_len - n + 1).sum()
}

/// 32-bit FNV-1a over the UTF-8 bytes of `s`, as fastText computes it.
///
/// fastText feeds each byte through a signed `int8_t` before widening, so
/// bytes ≥ 0x80 are sign-extended. Reproducing that keeps bucket indices
/// compatible with published models for non-ASCII words.
pub fn fasttext_hash(s: &str) -> u32 {
    let mut h: u32 = 2_166_136_261;
    for &b in s.as_bytes() {
        h ^= b as i8 as u32;
        h = h.wrapping_mul(16_777_619);
    }
    h
}
