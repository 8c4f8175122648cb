#![allow(dead_code)]

use std::path::{Path, PathBuf};

use ner_core::corpus::{CharVocab, LabelSchema, Sentence};
use ner_core::embeddings::EmbeddingStore;
use ner_core::model::{build_model, CharVariant, ModelConfig, NerModel};
use ner_core::training::{train_two_stage, TrainConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const PLACES: &[&str] = &["Aachen", "Berlin", "Hamburg", "Köln", "Bonn", "Essen", "Trier", "Ulm"];
pub const PEOPLE: &[&str] = &["Anna", "Peter", "Maria", "Jonas", "Lena", "Paul"];
const FILLER: &[&str] = &["liegt", "im", "Westen", "Osten", "wohnt", "in", "seit", "2018", ".", "und", "besucht"];

pub const WORD_DIM: usize = 8;

fn sentence(rng: &mut ChaCha8Rng) -> Sentence {
    let place = *PLACES.choose(rng).unwrap();
    let person = *PEOPLE.choose(rng).unwrap();
    let dir = if rng.gen_bool(0.5) { "Westen" } else { "Osten" };
    let (tokens, labels): (Vec<&str>, Vec<&str>) = match rng.gen_range(0..3) {
        0 => (vec![place, "liegt", "im", dir], vec!["B-LOC", "O", "O", "O"]),
        1 => (vec![person, "wohnt", "in", place], vec!["B-PER", "O", "O", "B-LOC"]),
        _ => (
            vec![person, "besucht", place, "seit", "2018", "."],
            vec!["B-PER", "O", "B-LOC", "O", "O", "O"],
        ),
    };
    Sentence::new(
        tokens.into_iter().map(String::from).collect(),
        labels.into_iter().map(String::from).collect(),
    )
}

pub fn corpus(n: usize, seed: u64) -> Vec<Sentence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| sentence(&mut rng)).collect()
}

pub fn store() -> EmbeddingStore {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut s = EmbeddingStore::new(WORD_DIM);
    for w in PLACES.iter().chain(PEOPLE).chain(FILLER) {
        let v: Vec<f32> = (0..WORD_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect();
        s.insert(w, &v).unwrap();
    }
    s
}

/// A small CNN-char model trained until it tags the fixture corpus.
pub fn fixture_model() -> (NerModel, EmbeddingStore) {
    let store = store();
    let train = corpus(60, 1);
    let dev = corpus(20, 2);
    let mut cfg = ModelConfig::new(CharVariant::Cnn, LabelSchema::new("fixture", ["PER", "LOC"]).unwrap());
    cfg.word_dim = WORD_DIM;
    cfg.char_emb_dim = 4;
    cfg.char_cnn_filters = 4;
    cfg.token_lstm_cells = 8;
    let model = build_model(cfg, CharVocab::build(&train), 3).unwrap();
    let tc = TrainConfig {
        stage1_epochs: 25,
        stage2_epochs: 0,
        ..TrainConfig::default()
    };
    let (mut model, _) = train_two_stage(model, &train, &dev, &store, &tc).unwrap();
    model.round_to_f32();
    (model, store)
}

/// Writes the fixture model, its vectors and a registry naming it
/// `germeval-outer`; returns the registry path.
pub fn write_fixture(dir: &Path) -> PathBuf {
    let (model, store) = fixture_model();
    model.save(dir.join("fixture.mner")).unwrap();
    store.save(dir.join("fixture.vec")).unwrap();
    let registry = dir.join("registry.toml");
    std::fs::write(
        &registry,
        "[[model]]\nname = \"germeval-outer\"\npath = \"fixture.mner\"\nembeddings = \"fixture.vec\"\n",
    )
    .unwrap();
    registry
}
