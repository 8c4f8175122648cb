//! Deterministic GermEval-style toy corpora with matching word vectors.
//!
//! Entity names are pseudo-words whose class shows in their suffix
//! (`-burg` for locations, `-mann` for persons, ...). Capitalized common
//! nouns are labelled `O`, so casing alone does not identify entities.
//! Many development and test names are missing from both the training
//! split and the word vectors, which leaves spelling as the only signal.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::corpus::Sentence;
use crate::embeddings::EmbeddingStore;

#[derive(Clone, Debug)]
pub struct SyntheticSpec {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub word_dim: usize,
    /// Share of evaluation entity mentions drawn from names never seen in
    /// training.
    pub unseen_entity_rate: f64,
    /// Share of unseen names that still have a word vector.
    pub unseen_in_vectors: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            train: 200,
            dev: 100,
            test: 100,
            word_dim: 32,
            unseen_entity_rate: 0.6,
            unseen_in_vectors: 0.3,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub train: Vec<Sentence>,
    pub dev: Vec<Sentence>,
    pub test: Vec<Sentence>,
    pub store: EmbeddingStore,
}

const SYLLABLES: &[&str] = &[
    "ka", "lo", "ri", "te", "man", "sa", "ber", "tin", "do", "hel", "va", "mu", "ne", "gor", "pi", "ul", "fe",
    "stro", "an", "wi", "zel", "bra", "ko", "lin", "mar", "quo", "ta", "ve", "nor", "si",
];

const FUNCTION_WORDS: &[&str] = &[
    "und", "der", "die", "das", "in", "mit", "von", "auf", "für", "ist", "war", "hat", "nicht", "auch", "am",
    "im", "zum", "nach", "bei", "aus", "über", "sich", "ein", "eine", "wird", "wurde", "sagte", "heute", ",",
    ".", "\"", "-", "2018", "3,5", "12.",
];

struct Class {
    label: &'static str,
    suffixes: &'static [&'static str],
}

const CLASSES: &[Class] = &[
    Class {
        label: "PER",
        suffixes: &["mann", "ski", "sen", "bauer", "meier"],
    },
    Class {
        label: "LOC",
        suffixes: &["burg", "dorf", "stadt", "hausen", "heim"],
    },
    Class {
        label: "ORG",
        suffixes: &["werke", "bank", "tec", "gruppe", "verband"],
    },
    Class {
        label: "OTH",
        suffixes: &["fest", "preis", "pokal", "gesetz", "award"],
    },
];

const NOUN_SUFFIXES: &[&str] = &["ung", "heit", "keit", "schaft", "chen", "tum", "nis"];

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn stem<R: Rng + ?Sized>(rng: &mut R) -> String {
    let n = rng.gen_range(2..=3);
    (0..n).map(|_| *SYLLABLES.choose(rng).unwrap()).collect()
}

fn unique_words<R: Rng>(rng: &mut R, n: usize, make: impl Fn(&mut R) -> String) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(n);
    let mut tries = 0;
    while out.len() < n && tries < n * 50 {
        tries += 1;
        let w = make(rng);
        if seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

struct Pools {
    nouns: Vec<String>,
    /// Per class: (seen in training, unseen).
    names: Vec<(Vec<String>, Vec<String>)>,
}

fn sentence(rng: &mut impl Rng, pools: &Pools, unseen_rate: f64, id: String) -> Sentence {
    let target = rng.gen_range(5..=14);
    let mut tokens = Vec::new();
    let mut outer = Vec::new();
    let mut inner = Vec::new();
    while tokens.len() < target {
        let r: f64 = rng.gen();
        if r < 0.45 {
            tokens.push(FUNCTION_WORDS.choose(rng).unwrap().to_string());
            outer.push("O".to_string());
            inner.push("O".to_string());
        } else if r < 0.7 {
            tokens.push(pools.nouns.choose(rng).unwrap().clone());
            outer.push("O".to_string());
            inner.push("O".to_string());
        } else {
            let ci = rng.gen_range(0..CLASSES.len());
            let class = CLASSES[ci].label;
            let (seen, unseen) = &pools.names[ci];
            let pool = if rng.gen::<f64>() < unseen_rate { unseen } else { seen };
            let name = pool.choose(rng).unwrap().clone();
            if class == "ORG" && rng.gen::<f64>() < 0.25 {
                // "<Place> Bank": an organization with a nested location.
                let (lseen, lunseen) = &pools.names[1];
                let lpool = if rng.gen::<f64>() < unseen_rate { lunseen } else { lseen };
                tokens.push(lpool.choose(rng).unwrap().clone());
                tokens.push("Bank".to_string());
                outer.extend(["B-ORG".to_string(), "I-ORG".to_string()]);
                inner.extend(["B-LOC".to_string(), "O".to_string()]);
                continue;
            }
            if class == "LOC" && rng.gen::<f64>() < 0.1 {
                // Lower-case derivation, e.g. "kaloburger".
                tokens.push(format!("{}er", name.to_lowercase()));
                outer.push("B-LOCderiv".to_string());
                inner.push("O".to_string());
                continue;
            }
            tokens.push(name);
            outer.push(format!("B-{class}"));
            inner.push("O".to_string());
            if class == "PER" && rng.gen::<f64>() < 0.4 {
                tokens.push(pool.choose(rng).unwrap().clone());
                outer.push("I-PER".to_string());
                inner.push("O".to_string());
            }
        }
    }
    Sentence {
        tokens,
        outer_labels: outer,
        inner_labels: Some(inner),
        source_id: id,
    }
}

/// Builds a corpus and a plain word-vector store. Vectors are a category
/// centroid plus noise, so words of the same kind lie close together.
pub fn generate(spec: &SyntheticSpec) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let nouns = unique_words(&mut rng, 150, |r| {
        capitalize(&format!("{}{}", stem(r), NOUN_SUFFIXES.choose(r).unwrap()))
    });
    let names = CLASSES
        .iter()
        .map(|c| {
            let all = unique_words(&mut rng, 240, |r| {
                capitalize(&format!("{}{}", stem(r), c.suffixes.choose(r).unwrap()))
            });
            let (seen, unseen) = all.split_at(120);
            (seen.to_vec(), unseen.to_vec())
        })
        .collect();
    let pools = Pools { nouns, names };

    let make = |rng: &mut ChaCha8Rng, n: usize, rate: f64, split: &str| {
        (0..n)
            .map(|i| sentence(rng, &pools, rate, format!("synthetic-{split}-{i}")))
            .collect::<Vec<_>>()
    };
    let train = make(&mut rng, spec.train, 0.0, "train");
    let dev = make(&mut rng, spec.dev, spec.unseen_entity_rate, "dev");
    let test = make(&mut rng, spec.test, spec.unseen_entity_rate, "test");

    let dim = spec.word_dim;
    let noise = Normal::new(0.0, 0.35).unwrap();
    let centroid = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..dim).map(|_| rng.gen_range(-0.5..0.5)).collect() };
    let mut store = EmbeddingStore::new(dim);
    let mut add = |rng: &mut ChaCha8Rng, words: &[String], c: &[f64]| {
        for w in words {
            let v: Vec<f32> = c.iter().map(|&x| (x + noise.sample(rng)) as f32).collect();
            store.insert(w, &v).expect("dimension matches");
        }
    };
    let fc = centroid(&mut rng);
    let fw: Vec<String> = FUNCTION_WORDS.iter().map(|s| s.to_string()).chain(["Bank".to_string()]).collect();
    add(&mut rng, &fw, &fc);
    let nc = centroid(&mut rng);
    add(&mut rng, &pools.nouns, &nc);
    for (seen, unseen) in &pools.names {
        let c = centroid(&mut rng);
        add(&mut rng, seen, &c);
        let k = (unseen.len() as f64 * spec.unseen_in_vectors).round() as usize;
        add(&mut rng, &unseen[..k], &c);
    }
    SyntheticCorpus { train, dev, test, store }
}
