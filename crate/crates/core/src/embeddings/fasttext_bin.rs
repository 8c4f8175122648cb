//! Reader for native fastText `.bin` models.
//!
//! Only what a subword store needs is kept: the dictionary words and the
//! input matrix. Word vectors are materialized the way fastText's
//! `getWordVector` computes them, as the mean of the word row and the rows
//! of its n-gram buckets.

use std::io::Read;

use super::{extract_char_ngrams, fasttext_hash, EmbeddingStore, SubwordBuckets};
use crate::error::{Error, Result};

const MAGIC: i32 = 793_712_314;

struct Bin<R> {
    inner: R,
}

impl<R: Read> Bin<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.inner
            .read_exact(&mut b)
            .map_err(|e| Error::ModelFormat(format!("truncated fastText model: {e}")))?;
        Ok(b)
    }

    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.bytes()?))
    }

    fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.bytes()?))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.bytes()?))
    }

    fn word(&mut self) -> Result<String> {
        let mut raw = Vec::new();
        loop {
            let [b] = self.bytes::<1>()?;
            if b == 0 {
                break;
            }
            raw.push(b);
        }
        String::from_utf8(raw).map_err(|_| Error::ModelFormat("dictionary word is not UTF-8".into()))
    }
}

fn count(v: i64, what: &str) -> Result<usize> {
    usize::try_from(v).map_err(|_| Error::ModelFormat(format!("negative {what}: {v}")))
}

/// Converts a fastText binary model into a subword [`EmbeddingStore`].
pub fn read_fasttext_bin(reader: impl Read) -> Result<EmbeddingStore> {
    let mut r = Bin { inner: reader };
    if r.i32()? != MAGIC {
        return Err(Error::ModelFormat("not a fastText model (bad magic)".into()));
    }
    let _version = r.i32()?;
    // dim ws epoch minCount neg wordNgrams loss model bucket minn maxn lrUpdateRate, then t
    let mut args = [0i32; 12];
    for a in &mut args {
        *a = r.i32()?;
    }
    let _t = r.bytes::<8>()?;
    let dim = count(args[0] as i64, "dim")?;
    let bucket = count(args[8] as i64, "bucket count")?;
    let (min_n, max_n) = (count(args[9] as i64, "minn")?, count(args[10] as i64, "maxn")?);

    let size = count(r.i32()? as i64, "dictionary size")?;
    let nwords = count(r.i32()? as i64, "word count")?;
    let _nlabels = r.i32()?;
    let _ntokens = r.i64()?;
    let prune = r.i64()?;
    let mut words = Vec::with_capacity(nwords);
    for i in 0..size {
        let w = r.word()?;
        let _count = r.i64()?;
        let [kind] = r.bytes::<1>()?;
        if i < nwords && kind == 0 {
            words.push(w);
        }
    }
    if prune > 0 {
        return Err(Error::ModelFormat("pruned (quantized) fastText models are not supported".into()));
    }
    let [quant] = r.bytes::<1>()?;
    if quant != 0 {
        return Err(Error::ModelFormat("quantized fastText models are not supported".into()));
    }
    let rows = count(r.i64()?, "matrix rows")?;
    let cols = count(r.i64()?, "matrix columns")?;
    if cols != dim || rows != nwords + bucket {
        return Err(Error::ModelFormat(format!(
            "input matrix {rows}x{cols}, expected {}x{dim}",
            nwords + bucket
        )));
    }
    let mut matrix = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        matrix.push(r.f32()?);
    }

    let bucket_rows = matrix[nwords * dim..].to_vec();
    let mut store = EmbeddingStore::with_subwords(
        dim,
        SubwordBuckets {
            min_n,
            max_n,
            bucket_count: bucket,
            rows: bucket_rows,
        },
    )?;
    let mut acc = vec![0f64; dim];
    for (id, word) in words.iter().enumerate() {
        acc.iter_mut().for_each(|x| *x = 0.0);
        let mut add = |row: usize| {
            for (a, &x) in acc.iter_mut().zip(&matrix[row * dim..(row + 1) * dim]) {
                *a += x as f64;
            }
        };
        add(id);
        let mut n = 1usize;
        if max_n > 0 {
            for gram in extract_char_ngrams(word, min_n, max_n) {
                add(nwords + fasttext_hash(&gram) as usize % bucket);
                n += 1;
            }
        }
        let v: Vec<f32> = acc.iter().map(|x| (x / n as f64) as f32).collect();
        store.insert(word, &v)?;
    }
    Ok(store)
}
