use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, NewsSample};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    /// Train / validation / test shares.
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            ratios: [0.7, 0.1, 0.2],
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" | "valid" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split '{other}'")),
        }
    }
}

/// Corpus indices of each split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    pub fn get(&self, which: Split) -> &[usize] {
        match which {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }

    pub fn select<'a>(&self, which: Split, samples: &'a [NewsSample]) -> Vec<&'a NewsSample> {
        self.get(which).iter().map(|&i| &samples[i]).collect()
    }

    /// Split of every corpus index, in corpus order.
    pub fn membership(&self, n: usize) -> Vec<Split> {
        let mut out = vec![Split::Train; n];
        for &i in &self.validation {
            out[i] = Split::Validation;
        }
        for &i in &self.test {
            out[i] = Split::Test;
        }
        out
    }
}

/// Seeded partition with sizes `round(r_train·n)`, `round(r_val·n)` and the
/// remainder for test.
pub fn split(samples: &[NewsSample], cfg: &SplitConfig) -> Result<Splits, DataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    split_with_rng(samples.len(), cfg.ratios, &mut rng)
}

/// Same as [`split`], drawing the permutation from a caller-owned stream.
pub fn split_with_rng<R: Rng + ?Sized>(
    n: usize,
    ratios: [f64; 3],
    rng: &mut R,
) -> Result<Splits, DataError> {
    let total: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) || (total - 1.0).abs() > 1e-9 {
        return Err(DataError::SplitRatios(ratios));
    }
    let n_train = ((ratios[0] * n as f64).round() as usize).min(n);
    let n_val = ((ratios[1] * n as f64).round() as usize).min(n - n_train);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let test = order.split_off(n_train + n_val);
    let validation = order.split_off(n_train);
    let splits = Splits {
        train: order,
        validation,
        test,
    };
    for which in [Split::Train, Split::Validation, Split::Test] {
        if splits.get(which).is_empty() {
            return Err(DataError::EmptySplit(which.name()));
        }
    }
    Ok(splits)
}


/// Writes `id<TAB>split` lines in corpus order.
pub fn write_split_manifest(
    path: impl AsRef<Path>,
    samples: &[NewsSample],
    splits: &Splits,
) -> Result<(), DataError> {
    let path = path.as_ref();
    let membership = splits.membership(samples.len());
    let mut out = String::new();
    for (s, which) in samples.iter().zip(membership) {
        out.push_str(&s.id);
        out.push('\t');
        out.push_str(which.name());
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| DataError::io(path, e))
}

pub fn read_split_manifest(path: impl AsRef<Path>) -> Result<Vec<(String, Split)>, DataError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            let (id, which) = l.split_once('\t').ok_or_else(|| DataError::Malformed {
                line: i + 1,
                message: "expected id<TAB>split".into(),
            })?;
            let which = which.parse().map_err(|message| DataError::Malformed {
                line: i + 1,
                message,
            })?;
            Ok((id.to_string(), which))
        })
        .collect()
}
