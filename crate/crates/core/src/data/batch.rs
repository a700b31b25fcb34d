use serde::{Deserialize, Serialize};

use super::{tokenize, NewsSample, Vocabulary, PAD, UNK};
use crate::sentiment::SentimentScorer;

/// Length caps applied before batching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeqCaps {
    /// Tokens kept from the article.
    pub news_len: usize,
    /// Comments kept per article (earliest first).
    pub comments: usize,
    /// Tokens kept per comment.
    pub comment_len: usize,
}

impl Default for SeqCaps {
    fn default() -> Self {
        SeqCaps {
            news_len: 256,
            comments: 32,
            comment_len: 64,
        }
    }
}

/// A sample mapped to vocabulary indices, with per-comment sentiment.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenizedSample {
    pub id: String,
    pub label: usize,
    pub news_tokens: Vec<usize>,
    pub comment_tokens: Vec<Vec<usize>>,
    /// Ternary polarity of each kept comment.
    pub sentiment: Vec<f64>,
    /// Word tokens of each kept comment (before truncation to
    /// `comment_len`), for term-frequency reports.
    pub comment_words: Vec<Vec<String>>,
}

pub fn encode_sample(
    sample: &NewsSample,
    vocab: &Vocabulary,
    scorer: &dyn SentimentScorer,
    caps: &SeqCaps,
) -> TokenizedSample {
    let mut news_tokens: Vec<usize> = tokenize(&sample.text)
        .iter()
        .map(|t| vocab.index(t))
        .collect();
    news_tokens.truncate(caps.news_len);
    // An empty text still needs one real position for attention to normalize.
    if news_tokens.is_empty() {
        news_tokens.push(UNK);
    }

    let kept = &sample.comments[..sample.comments.len().min(caps.comments)];
    let mut comment_tokens = Vec::with_capacity(kept.len());
    let mut sentiment = Vec::with_capacity(kept.len());
    let mut comment_words = Vec::with_capacity(kept.len());
    for c in kept {
        let words = tokenize(c);
        sentiment.push(scorer.score(&words).value());
        let mut ids: Vec<usize> = words.iter().map(|w| vocab.index(w)).collect();
        ids.truncate(caps.comment_len);
        if ids.is_empty() {
            ids.push(UNK);
        }
        comment_tokens.push(ids);
        comment_words.push(words);
    }
    TokenizedSample {
        id: sample.id.clone(),
        label: sample.label,
        news_tokens,
        comment_tokens,
        sentiment,
        comment_words,
    }
}

/// Equal-length padded sequences, sequence-major: position `t` of sequence
/// `s` is at `s * len + t`. Padding uses index 0 with a false mask.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedSeqs {
    pub seqs: usize,
    pub len: usize,
    pub tokens: Vec<usize>,
    pub mask: Vec<bool>,
}

impl PaddedSeqs {
    fn pad(seqs: &[&[usize]], cap: usize) -> Self {
        let len = seqs
            .iter()
            .map(|s| s.len().min(cap))
            .max()
            .unwrap_or(0)
            .max(1);
        let mut tokens = vec![PAD; seqs.len() * len];
        let mut mask = vec![false; seqs.len() * len];
        for (s, seq) in seqs.iter().enumerate() {
            for (t, &tok) in seq.iter().take(cap).enumerate() {
                tokens[s * len + t] = tok;
                mask[s * len + t] = true;
            }
        }
        PaddedSeqs {
            seqs: seqs.len(),
            len,
            tokens,
            mask,
        }
    }

    pub fn token(&self, seq: usize, t: usize) -> usize {
        self.tokens[seq * self.len + t]
    }

    pub fn is_real(&self, seq: usize, t: usize) -> bool {
        self.mask[seq * self.len + t]
    }

    pub fn real_len(&self, seq: usize) -> usize {
        (0..self.len).filter(|&t| self.is_real(seq, t)).count()
    }
}

/// One padded mini-batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// Positions of the batch members in the slice given to [`make_batches`].
    pub members: Vec<usize>,
    pub labels: Vec<usize>,
    pub news: PaddedSeqs,
    /// Comment slots per sample; at least one so comment-free samples still
    /// get an all-padding row.
    pub comment_slots: usize,
    /// `size × comment_slots` comments, sample-major.
    pub comments: PaddedSeqs,
    pub comment_mask: Vec<bool>,
    /// Polarity per comment slot; zero on padding.
    pub sentiment: Vec<f64>,
}

impl Batch {
    pub fn size(&self) -> usize {
        self.labels.len()
    }

    pub fn real_comments(&self) -> usize {
        self.comment_mask.iter().filter(|&&m| m).count()
    }
}

/// Pads consecutive chunks of `samples`; the final partial batch is kept.
pub fn make_batches(samples: &[TokenizedSample], batch_size: usize, caps: &SeqCaps) -> Vec<Batch> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let mut out = Vec::new();
    for (chunk_no, chunk) in samples.chunks(batch_size).enumerate() {
        let members: Vec<usize> = (0..chunk.len()).map(|i| chunk_no * batch_size + i).collect();
        let news: Vec<&[usize]> = chunk.iter().map(|s| s.news_tokens.as_slice()).collect();
        let slots = chunk
            .iter()
            .map(|s| s.comment_tokens.len().min(caps.comments))
            .max()
            .unwrap_or(0)
            .max(1);
        let empty: &[usize] = &[];
        let mut comments: Vec<&[usize]> = Vec::with_capacity(chunk.len() * slots);
        let mut comment_mask = Vec::with_capacity(chunk.len() * slots);
        let mut sentiment = Vec::with_capacity(chunk.len() * slots);
        for s in chunk {
            for j in 0..slots {
                match s.comment_tokens.get(j).filter(|_| j < caps.comments) {
                    Some(c) => {
                        comments.push(c.as_slice());
                        comment_mask.push(true);
                        sentiment.push(s.sentiment[j]);
                    }
                    None => {
                        comments.push(empty);
                        comment_mask.push(false);
                        sentiment.push(0.0);
                    }
                }
            }
        }
        out.push(Batch {
            members,
            labels: chunk.iter().map(|s| s.label).collect(),
            news: PaddedSeqs::pad(&news, caps.news_len),
            comment_slots: slots,
            comments: PaddedSeqs::pad(&comments, caps.comment_len),
            comment_mask,
            sentiment,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sentiment::SentimentLexicon;

    fn tok(id: &str, news: usize, comments: usize) -> TokenizedSample {
        TokenizedSample {
            id: id.into(),
            label: 0,
            news_tokens: (2..2 + news).collect(),
            comment_tokens: (0..comments).map(|j| vec![2 + j, 3 + j]).collect(),
            sentiment: vec![1.0; comments],
            comment_words: vec![vec![]; comments],
        }
    }

    #[test]
    fn remainder_batch_kept() {
        let samples: Vec<_> = (0..9).map(|i| tok(&i.to_string(), 3, 2)).collect();
        let b = make_batches(&samples, 8, &SeqCaps::default());
        assert_eq!(b.iter().map(Batch::size).collect::<Vec<_>>(), vec![8, 1]);
        assert_eq!(b[1].members, vec![8]);
    }

    #[test]
    fn comments_truncated_to_earliest() {
        let s = tok("a", 3, 40);
        let caps = SeqCaps {
            comments: 32,
            ..SeqCaps::default()
        };
        let b = &make_batches(&[s.clone()], 8, &caps)[0];
        assert_eq!(b.comment_slots, 32);
        for j in 0..32 {
            assert_eq!(b.comments.token(j, 0), s.comment_tokens[j][0]);
        }
    }

    #[test]
    fn comment_free_sample_gets_padding_row() {
        let b = &make_batches(&[tok("a", 2, 0)], 8, &SeqCaps::default())[0];
        assert_eq!(b.comment_slots, 1);
        assert_eq!(b.comment_mask, vec![false]);
        assert_eq!(b.comments.real_len(0), 0);
        assert_eq!(b.sentiment, vec![0.0]);
    }

    #[test]
    fn token_caps_and_masks() {
        let caps = SeqCaps {
            news_len: 4,
            comments: 2,
            comment_len: 1,
        };
        let b = &make_batches(&[tok("a", 10, 3), tok("b", 2, 1)], 8, &caps)[0];
        assert_eq!(b.news.len, 4);
        assert_eq!(b.news.real_len(0), 4);
        assert_eq!(b.news.real_len(1), 2);
        assert_eq!(b.news.token(1, 3), PAD);
        assert_eq!(b.comment_slots, 2);
        assert_eq!(b.comment_mask, vec![true, true, true, false]);
        assert_eq!(b.comments.len, 1);
    }

    #[test]
    fn encode_maps_back_to_source_tokens() {
        let sample = NewsSample {
            id: "x".into(),
            text: "Alpha beta, gamma!".into(),
            label: 1,
            comments: vec!["good stuff".into(), "".into()],
        };
        let vocab = Vocabulary::build(std::slice::from_ref(&sample), 4);
        let lex = SentimentLexicon::new([("good".to_string(), 2.0)].into(), 0.05, -0.05).unwrap();
        let t = encode_sample(&sample, &vocab, &lex, &SeqCaps::default());
        let words: Vec<&str> = t.news_tokens.iter().map(|&i| vocab.token(i)).collect();
        assert_eq!(words, tokenize(&sample.text));
        assert_eq!(t.sentiment, vec![1.0, 0.0]);
        assert_eq!(t.comment_tokens[1], vec![UNK]);
    }
}
