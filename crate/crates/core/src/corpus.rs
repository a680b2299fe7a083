//! Byte-level tokenization and a seeded synthetic English-like corpus.
//!
//! The generator draws words from a fixed invented lexicon with Zipfian
//! frequencies and a sparse successor table, so there is local structure to
//! learn. Each paragraph also picks a few topic words that recur throughout
//! it, which rewards looking far back. The bundled train and test files are
//! the generator's output for two different seeds.

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Byte-level vocabulary size.
pub const BYTE_VOCAB: usize = 256;

pub const TRAIN_SEED: u64 = 1;
pub const TEST_SEED: u64 = 2;
pub const TRAIN_BYTES: usize = 300_000;
pub const TEST_BYTES: usize = 60_000;

const LEXICON_SEED: u64 = 0x6b65_72706c65;
const LEXICON_SIZE: usize = 600;
const SUCCESSORS: usize = 5;

static BUNDLED_TRAIN: &str = include_str!("../data/synthetic_train.txt");
static BUNDLED_TEST: &str = include_str!("../data/synthetic_test.txt");

pub fn bundled_train_text() -> &'static str {
    BUNDLED_TRAIN
}

pub fn bundled_test_text() -> &'static str {
    BUNDLED_TEST
}

/// One token per byte.
pub fn encode_bytes(bytes: &[u8]) -> Vec<usize> {
    bytes.iter().map(|&b| usize::from(b)).collect()
}

pub fn decode_bytes(tokens: &[usize]) -> String {
    tokens.iter().map(|&t| char::from(t as u8)).collect()
}

struct Lexicon {
    words: Vec<String>,
    zipf: WeightedIndex<f64>,
    successors: Vec<[usize; SUCCESSORS]>,
}

impl Lexicon {
    fn new() -> Self {
        const ONSETS: [&str; 20] = [
            "b", "c", "d", "f", "g", "h", "l", "m", "n", "p", "r", "s", "t", "v", "w", "th", "st", "br", "cl", "sh",
        ];
        const VOWELS: [&str; 8] = ["a", "e", "i", "o", "u", "ea", "ou", "ai"];
        const CODAS: [&str; 8] = ["", "", "n", "r", "s", "t", "nd", "ll"];
        let mut rng = ChaCha8Rng::seed_from_u64(LEXICON_SEED);
        let mut words: Vec<String> = ["the", "a", "of", "and", "to", "in", "is", "it", "that", "was"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        while words.len() < LEXICON_SIZE {
            let syllables = [1, 1, 2, 2, 2, 3][rng.gen_range(0..6)];
            let mut w = String::new();
            for _ in 0..syllables {
                w.push_str(ONSETS.choose(&mut rng).unwrap());
                w.push_str(VOWELS.choose(&mut rng).unwrap());
            }
            w.push_str(CODAS.choose(&mut rng).unwrap());
            if !words.contains(&w) {
                words.push(w);
            }
        }
        let zipf = WeightedIndex::new((0..LEXICON_SIZE).map(|r| 1.0 / (r as f64 + 2.7))).unwrap();
        let successors = (0..LEXICON_SIZE)
            .map(|_| std::array::from_fn(|_| zipf.sample(&mut rng)))
            .collect();
        Self { words, zipf, successors }
    }
}

/// Deterministic text of exactly `len` ASCII bytes.
pub fn synthetic_text(seed: u64, len: usize) -> String {
    let lex = Lexicon::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::with_capacity(len + 128);
    while out.len() < len {
        // Topic words come from the rare half of the lexicon.
        let topics: Vec<usize> = (0..rng.gen_range(2..=4))
            .map(|_| rng.gen_range(LEXICON_SIZE / 2..LEXICON_SIZE))
            .collect();
        for _ in 0..rng.gen_range(3..=7) {
            let mut prev = lex.zipf.sample(&mut rng);
            for i in 0..rng.gen_range(6..=16) {
                let roll: f64 = rng.gen();
                let word = if roll < 0.18 {
                    *topics.choose(&mut rng).unwrap()
                } else if roll < 0.65 {
                    lex.successors[prev][rng.gen_range(0..SUCCESSORS)]
                } else {
                    lex.zipf.sample(&mut rng)
                };
                let text = &lex.words[word];
                if i == 0 {
                    let mut chars = text.chars();
                    let first = chars.next().unwrap().to_ascii_uppercase();
                    out.push(first);
                    out.push_str(chars.as_str());
                } else {
                    if rng.gen_bool(0.06) {
                        out.push(',');
                    }
                    out.push(' ');
                    out.push_str(text);
                }
                prev = word;
            }
            out.push_str(". ");
        }
        out.pop();
        out.push_str("\n\n");
    }
    out.truncate(len);
    out
}
