use std::fs;
use std::path::Path;

use rand::Rng;

use super::{DataError, Vocabulary, PAD};
use crate::tensor::{Scalar, Tensor};

/// Half-width of the uniform initializer for tokens missing from the file.
pub const OOV_INIT_BOUND: f64 = 0.05;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EmbeddingStats {
    /// Vocabulary rows copied from the file.
    pub covered: usize,
    /// Repeated token lines; the last occurrence wins.
    pub duplicates: usize,
}

/// Builds a `|V| × dim` table from a word2vec-style text file
/// (`token v1 … vdim` per line, optional `count dim` first line).
///
/// Every row is first drawn uniform in `[-0.05, 0.05]` so the number of
/// random draws does not depend on file coverage; rows found in the file
/// are then overwritten and the padding row zeroed. `path = None` behaves
/// like an empty file.
pub fn load_embeddings<T: Scalar, R: Rng + ?Sized>(
    path: Option<&Path>,
    vocab: &Vocabulary,
    rng: &mut R,
) -> Result<(Tensor<T>, EmbeddingStats), DataError> {
    let dim = vocab.embedding_dim();
    let mut table = Tensor::<T>::uniform(vocab.len(), dim, OOV_INIT_BOUND, rng);
    let mut stats = EmbeddingStats::default();

    if let Some(path) = path {
        let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        let mut seen = vec![false; vocab.len()];
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            let mut fields = line.split_whitespace();
            let Some(token) = fields.next() else {
                continue;
            };
            let rest: Vec<&str> = fields.collect();
            if lineno == 1 && rest.len() == 1 && token.parse::<usize>().is_ok() {
                continue;
            }
            if rest.len() != dim {
                return Err(DataError::EmbeddingDim {
                    line: lineno,
                    expected: dim,
                    found: rest.len(),
                });
            }
            let Some(row) = vocab.lookup(token) else {
                continue;
            };
            let values = rest
                .iter()
                .map(|v| v.parse::<f64>().map(T::of_f64))
                .collect::<Result<Vec<T>, _>>()
                .map_err(|e| DataError::Malformed {
                    line: lineno,
                    message: format!("bad vector component: {e}"),
                })?;
            if seen[row] {
                stats.duplicates += 1;
            } else {
                seen[row] = true;
                stats.covered += 1;
            }
            table.row_slice_mut(row).copy_from_slice(&values);
        }
    }
    table.row_slice_mut(PAD).iter_mut().for_each(|x| *x = T::zero());
    Ok((table, stats))
}
