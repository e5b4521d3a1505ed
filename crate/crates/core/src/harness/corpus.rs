use rand::distributions::{Distribution, WeightedIndex};

use super::vocab::{self, TokenId};
use crate::error::{Error, Result};
use crate::rng;

/// Frequency rank of tokens in general text: function words first, generic
/// code words next, then digits and symbols. Task-template words and control
/// tokens are rarest.
const GENERAL_RANK: &[&str] = &[
    "the", "a", "of", "and", "is", "to", "in", "it", "that", "for", "on", "if", "else",
    "return", "def", "import", "class", "self", "none", "print", "while", "list", "string",
    "number", "value", "sum", "count", "0", "1", "2", "=", "(", ")", ",", ":", "3", "4", "5",
    "+", "-", "*", ";", "6", "7", "8", "9", "x", "f", "g", "h", "k", "assert", "by", "with",
    "then", "add", "subtract", "multiply", "start", "task", "carefully", "hastily", "<eos>",
    "<bos>",
];

/// A general-distribution token stream over the whole vocabulary with a
/// Zipf (1/rank) frequency profile. Not problem-formatted.
pub fn build_background_corpus(seed: u64, n_tokens: usize) -> Result<Vec<TokenId>> {
    if n_tokens == 0 {
        return Err(Error::InvalidArgument("background corpus needs n_tokens >= 1".into()));
    }
    let mut weights = vec![0.0; vocab::vocab_size()];
    for (rank, t) in GENERAL_RANK.iter().enumerate() {
        weights[vocab::tok(t) as usize] = 1.0 / (rank + 1) as f64;
    }
    let dist = WeightedIndex::new(&weights).expect("positive weights");
    let mut rng = rng::rng_from(rng::substream(seed, "background"));
    Ok((0..n_tokens)
        .map(|_| dist.sample(&mut rng) as TokenId)
        .collect())
}
