//! Small planted-signal corpus for smoke runs and overfitting checks.
//!
//! Fake items carry sensational article wording and comments that mix
//! skeptic vocabulary with negative words; real items carry sourcing
//! wording and neutral or mildly positive comments.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{format_corpus, parse_corpus, LabelMap, NewsSample};
use crate::sentiment::{parse_lexicon, SentimentLexicon};

/// Seed and size of the bundled corpus file.
pub const BUNDLED_SEED: u64 = 2024;
pub const BUNDLED_SIZE: usize = 64;

pub const BUNDLED_CORPUS: &str = include_str!("../data/synthetic.jsonl");
pub const BUNDLED_LEXICON: &str = include_str!("../data/lexicon.tsv");
pub const STOPWORDS_EN: &str = include_str!("../data/stopwords_en.txt");
pub const STOPWORDS_ZH: &str = include_str!("../data/stopwords_zh.txt");

/// Words planted in fake-class comments.
pub const SKEPTIC_TERMS: &[&str] = &["debunk", "fake", "rumor", "hoax", "fabricated", "misleading"];

const TOPICS: &[&str] = &[
    "city", "council", "vaccine", "election", "storm", "market", "school", "bridge", "river",
    "festival", "hospital", "budget", "airport", "harbor", "museum", "factory", "farm", "railway",
];
const REAL_NEWS: &[&str] = &[
    "officials", "confirmed", "report", "data", "according", "agency", "study", "published",
    "spokesperson", "records",
];
const FAKE_NEWS: &[&str] = &[
    "shocking", "secret", "miracle", "exposed", "banned", "insiders", "reveal", "cover", "hidden",
    "unbelievable",
];
const NEGATIVE: &[&str] = &["terrible", "awful", "angry", "wrong", "scam", "lies", "shame", "worst"];
const POSITIVE: &[&str] = &["thanks", "helpful", "interesting", "useful", "good", "nice"];
const NEUTRAL: &[&str] = &[
    "update", "noted", "article", "read", "local", "people", "today", "week", "source", "details",
    "information", "news",
];
const FILLER: &[&str] = &["this", "the", "is", "about", "just", "really", "so", "it"];

fn pick<'a, R: Rng>(rng: &mut R, words: &[&'a str]) -> &'a str {
    words.choose(rng).expect("non-empty word list")
}

fn sentence<'a, R: Rng>(rng: &mut R, mut words: Vec<&'a str>, pool: &[&'a str], len: usize) -> String {
    while words.len() < len {
        words.push(pick(rng, pool));
    }
    words.shuffle(rng);
    words.join(" ")
}

fn comment<R: Rng>(rng: &mut R, fake: bool) -> String {
    let len = rng.random_range(4..=8);
    let mut words = Vec::new();
    if fake {
        words.push(pick(rng, SKEPTIC_TERMS));
        words.push(pick(rng, NEGATIVE));
    } else if rng.random_bool(0.3) {
        words.push(pick(rng, POSITIVE));
    }
    let pool: Vec<&str> = NEUTRAL.iter().chain(FILLER).copied().collect();
    sentence(rng, words, &pool, len)
}

/// `n` samples alternating real and fake, fully determined by `seed`.
pub fn synthetic_corpus(n: usize, seed: u64) -> (LabelMap, Vec<NewsSample>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = LabelMap::new(vec!["real".into(), "fake".into()]);
    let samples = (0..n)
        .map(|i| {
            let fake = i % 2 == 1;
            let len = rng.random_range(10..=16);
            let markers = if fake { FAKE_NEWS } else { REAL_NEWS };
            let planted: Vec<&str> = (0..3).map(|_| pick(&mut rng, markers)).collect();
            let topics: Vec<&str> = TOPICS.iter().chain(FILLER).copied().collect();
            let text = sentence(&mut rng, planted, &topics, len);
            let count = rng.random_range(3..=6);
            let comments = (0..count).map(|_| comment(&mut rng, fake)).collect();
            NewsSample {
                id: format!("syn-{i:03}"),
                text,
                label: usize::from(fake),
                comments,
            }
        })
        .collect();
    (labels, samples)
}

/// File contents of a generated corpus.
pub fn synthetic_corpus_text(n: usize, seed: u64) -> String {
    let (labels, samples) = synthetic_corpus(n, seed);
    format_corpus(&labels, &samples)
}

/// The bundled corpus, parsed.
pub fn bundled_corpus() -> (LabelMap, Vec<NewsSample>) {
    parse_corpus(BUNDLED_CORPUS).expect("bundled corpus parses")
}

/// The bundled lexicon with the default ±0.05 thresholds.
pub fn bundled_lexicon() -> SentimentLexicon {
    parse_lexicon(BUNDLED_LEXICON, 0.05, -0.05)
        .expect("bundled lexicon parses")
        .0
}

/// Parses a one-word-per-line stopword list (`#` starts a comment).
pub fn parse_stopwords(text: &str) -> std::collections::HashSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect()
}
