use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Sentence;

/// A group of sentence indices padded to the longest member.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub lengths: Vec<usize>,
    pub max_len: usize,
}

impl Batch {
    pub fn from_indices(sentences: &[Sentence], indices: Vec<usize>) -> Self {
        let lengths: Vec<usize> = indices.iter().map(|&i| sentences[i].len()).collect();
        let max_len = lengths.iter().copied().max().unwrap_or(0);
        Batch { indices, lengths, max_len }
    }

    pub fn size(&self) -> usize {
        self.indices.len()
    }

    /// `mask[t][b]`: whether position `t` of member `b` is a real token.
    pub fn mask(&self) -> Vec<Vec<bool>> {
        (0..self.max_len)
            .map(|t| self.lengths.iter().map(|&l| t < l).collect())
            .collect()
    }
}

/// Shuffles by `seed`, sorts by length so batches hold similar lengths,
/// chunks, then shuffles the batch order. Every sentence lands in exactly
/// one batch. A `batch_size` of 0 is treated as 1.
pub fn make_batches(sentences: &[Sentence], batch_size: usize, seed: u64) -> Vec<Batch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..sentences.len()).collect();
    order.shuffle(&mut rng);
    order.sort_by_key(|&i| sentences[i].len());
    let mut batches: Vec<Batch> = order
        .chunks(batch_size.max(1))
        .map(|c| Batch::from_indices(sentences, c.to_vec()))
        .collect();
    batches.shuffle(&mut rng);
    batches
}
