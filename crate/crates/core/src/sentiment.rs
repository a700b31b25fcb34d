//! Ternary comment polarity from a valence lexicon.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SentimentError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: cannot parse valence '{value}'")]
    BadValence { line: usize, value: String },
    #[error("line {line}: expected token<TAB>valence")]
    MissingValence { line: usize },
    #[error("lexicon is empty")]
    Empty,
    #[error("thresholds must satisfy negative < 0 < positive (got {negative}, {positive})")]
    Thresholds { positive: f64, negative: f64 },
}

/// Polarity of one comment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SentimentScore {
    Negative,
    Neutral,
    Positive,
}

impl SentimentScore {
    pub fn value(self) -> f64 {
        match self {
            SentimentScore::Negative => -1.0,
            SentimentScore::Neutral => 0.0,
            SentimentScore::Positive => 1.0,
        }
    }
}

/// Anything that can rate a tokenized comment.
pub trait SentimentScorer: Send + Sync {
    fn score(&self, tokens: &[String]) -> SentimentScore;
}

/// Scores nothing; every comment is neutral.
#[derive(Debug, Clone, Copy, Default)]
pub struct NeutralScorer;

impl SentimentScorer for NeutralScorer {
    fn score(&self, _tokens: &[String]) -> SentimentScore {
        SentimentScore::Neutral
    }
}

pub const DEFAULT_POSITIVE_THRESHOLD: f64 = 0.05;
pub const DEFAULT_NEGATIVE_THRESHOLD: f64 = -0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct SentimentLexicon {
    valences: HashMap<String, f64>,
    positive: f64,
    negative: f64,
}

impl SentimentLexicon {
    pub fn new(
        valences: HashMap<String, f64>,
        positive: f64,
        negative: f64,
    ) -> Result<Self, SentimentError> {
        if !(negative < 0.0 && 0.0 < positive) {
            return Err(SentimentError::Thresholds { positive, negative });
        }
        if valences.is_empty() {
            return Err(SentimentError::Empty);
        }
        Ok(SentimentLexicon {
            valences,
            positive,
            negative,
        })
    }

    pub fn len(&self) -> usize {
        self.valences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valences.is_empty()
    }

    pub fn valence(&self, token: &str) -> Option<f64> {
        self.valences.get(token).copied()
    }

    pub fn thresholds(&self) -> (f64, f64) {
        (self.positive, self.negative)
    }

    /// Mean valence over tokens present in the lexicon; 0 when none are.
    pub fn raw_score(&self, tokens: &[String]) -> f64 {
        let (sum, n) = tokens
            .iter()
            .filter_map(|t| self.valences.get(t))
            .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }

    /// Copy with every valence negated.
    pub fn flipped(&self) -> Self {
        SentimentLexicon {
            valences: self.valences.iter().map(|(k, v)| (k.clone(), -v)).collect(),
            positive: self.positive,
            negative: self.negative,
        }
    }
}

impl SentimentScorer for SentimentLexicon {
    fn score(&self, tokens: &[String]) -> SentimentScore {
        let raw = self.raw_score(tokens);
        if raw > self.positive {
            SentimentScore::Positive
        } else if raw < self.negative {
            SentimentScore::Negative
        } else {
            SentimentScore::Neutral
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LexiconStats {
    pub duplicates: usize,
}

/// Reads `token<TAB>valence` lines. Extra tab-separated columns are
/// ignored, blank lines and `#` comments skipped, repeated tokens keep the
/// last valence.
pub fn load_lexicon(
    path: impl AsRef<Path>,
    positive: f64,
    negative: f64,
) -> Result<(SentimentLexicon, LexiconStats), SentimentError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| SentimentError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_lexicon(&text, positive, negative)
}

pub fn parse_lexicon(
    text: &str,
    positive: f64,
    negative: f64,
) -> Result<(SentimentLexicon, LexiconStats), SentimentError> {
    let mut valences = HashMap::new();
    let mut stats = LexiconStats::default();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut cols = line.split('\t');
        let token = cols.next().unwrap_or_default().trim();
        let value = cols
            .next()
            .ok_or(SentimentError::MissingValence { line: line_no })?
            .trim();
        let v: f64 = value.parse().map_err(|_| SentimentError::BadValence {
            line: line_no,
            value: value.to_string(),
        })?;
        if valences.insert(token.to_lowercase(), v).is_some() {
            stats.duplicates += 1;
        }
    }
    Ok((SentimentLexicon::new(valences, positive, negative)?, stats))
}
