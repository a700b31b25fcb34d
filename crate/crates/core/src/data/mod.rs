//! Corpus loading, tokenization, vocabulary, embeddings, splits and batching.

mod batch;
mod corpus;
mod embeddings;
mod split;
mod tokenize;
mod vocab;

pub use batch::{encode_sample, make_batches, Batch, PaddedSeqs, SeqCaps, TokenizedSample};
pub use corpus::{format_corpus, load_corpus, parse_corpus, write_corpus, LabelMap, NewsSample};
pub use embeddings::{load_embeddings, EmbeddingStats};
pub use split::{
    read_split_manifest, split, split_with_rng, write_split_manifest, Split, SplitConfig, Splits,
};
pub use tokenize::tokenize;
pub use vocab::{Vocabulary, PAD, UNK};

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("no records")]
    NoRecords,
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: unknown label '{label}'")]
    UnknownLabel { line: usize, label: String },
    #[error("line {line}: expected {expected} vector components, found {found}")]
    EmbeddingDim {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("invalid split ratios {0:?}: must be non-negative and sum to 1")]
    SplitRatios([f64; 3]),
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
}

impl DataError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.into(),
            source,
        }
    }
}
