use std::collections::HashMap;

use sha2::{Digest, Sha256};

use super::{tokenize, NewsSample};

pub const PAD: usize = 0;
pub const UNK: usize = 1;

/// Token ↔ index map shared by the news and comment embedding tables.
/// Index 0 is padding and index 1 the unknown token.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    embedding_dim: usize,
}

impl Vocabulary {
    /// Builds from article and comment tokens, most frequent first (ties by
    /// token), so the result depends only on the multiset of tokens.
    pub fn build(samples: &[NewsSample], embedding_dim: usize) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for s in samples {
            let texts = std::iter::once(&s.text).chain(&s.comments);
            for text in texts {
                for tok in tokenize(text) {
                    *counts.entry(tok).or_default() += 1;
                }
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Self::from_tokens(ranked.into_iter().map(|(t, _)| t), embedding_dim)
    }

    /// Vocabulary over `words` in order, after the two reserved entries.
    pub fn from_tokens(words: impl IntoIterator<Item = String>, embedding_dim: usize) -> Self {
        let mut tokens = vec!["<pad>".to_string(), "<unk>".to_string()];
        let mut index = HashMap::new();
        for w in words {
            if index.contains_key(&w) || w == "<pad>" || w == "<unk>" {
                continue;
            }
            index.insert(w.clone(), tokens.len());
            tokens.push(w);
        }
        Vocabulary {
            tokens,
            index,
            embedding_dim,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }

    /// Index of `token`, or [`UNK`].
    pub fn index(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn lookup(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, index: usize) -> &str {
        &self.tokens[index]
    }

    /// Non-reserved tokens in index order.
    pub fn words(&self) -> &[String] {
        &self.tokens[2..]
    }

    /// Hex SHA-256 over the ordered token list.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update([0u8]);
        }
        format!("{:x}", h.finalize())
    }
}
